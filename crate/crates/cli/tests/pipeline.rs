use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn geolang(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolang")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = geolang(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn json(text: &str) -> Value {
    serde_json::from_str(text.trim()).expect("one JSON object")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every artifact of a short end-to-end run, by file name.
fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let fx = fixtures();
    let p = |name: &str| dir.join(name);
    let config = p("run.cfg");
    fs::write(&config, "pretrain.steps=30\npretrain.lr=5e-3\nfinetune.steps=20\n").unwrap();
    let c = s(&config);
    ok(&["build-graph", "--config", c, "--pois", s(&fx.join("pois.jsonl")), "--clicks", s(&fx.join("clicks.jsonl")), "--sessions", s(&fx.join("sessions.jsonl")), "--out", s(&p("graph.ggr"))]);
    ok(&["sample-corpus", "--config", c, "--graph", s(&p("graph.ggr")), "--out", s(&p("corpus.txt"))]);
    ok(&["mask-corpus", "--config", c, "--graph", s(&p("graph.ggr")), "--corpus", s(&p("corpus.txt")), "--out", s(&p("examples.gmx")), "--vocab", s(&p("vocab.txt"))]);
    let report = json(&ok(&["pretrain", "--config", c, "--examples", s(&p("examples.gmx")), "--vocab", s(&p("vocab.txt")), "--out", s(&p("model.egl"))]));
    assert_eq!(report["steps"], 30);
    let (ckpt, vocab) = (p("model.egl"), p("vocab.txt"));
    let model = ["--checkpoint", s(&ckpt), "--vocab", s(&vocab)];
    let tasks = fx.join("tasks");
    for (task, data) in [("classify", "classify.jsonl"), ("match", "match.jsonl"), ("tag", "tag.jsonl"), ("geocode", "geocode.jsonl")] {
        let out = p(&format!("{task}.egl"));
        let trained = json(&ok(&[&["finetune", task, "--config", c], &model[..], &["--data", s(&tasks.join(data)), "--out", s(&out)]].concat()));
        let scored = json(&ok(&["eval", task, "--checkpoint", s(&out), "--vocab", s(&p("vocab.txt")), "--data", s(&tasks.join(data))]));
        assert_eq!(trained["value"], scored["value"], "{task}: training metric is the evaluation metric on the same data");
        let v = scored["value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{task}: {v}");
    }
    let rec = json(&ok(&[&["eval", "recommend"], &model[..], &["--data", s(&tasks.join("recommend.jsonl")), "--graph", s(&p("graph.ggr")), "--k", "5"]].concat()));
    assert_eq!(rec["metric"], "acc@5");
    assert_eq!(rec["n"], 100);

    let mut names: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), fs::read(dir.join(&n)).unwrap())).collect()
}

#[test]
fn full_pipeline_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["graph.ggr", "corpus.txt", "corpus.txt.meta.json", "examples.gmx", "examples.gmx.json", "vocab.txt", "model.egl", "model.egl.log.jsonl", "tag.egl"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(first.len(), second.len());
    for ((n1, b1), (n2, b2)) in first.iter().zip(&second) {
        assert_eq!(n1, n2);
        assert!(b1 == b2, "{n1} differs between runs");
    }
}

fn build_graph(dir: &Path, extra: &[&str]) -> Value {
    let fx = fixtures();
    let out = dir.join("g.ggr");
    let (pois, clicks, sessions) = (fx.join("pois.jsonl"), fx.join("clicks.jsonl"), fx.join("sessions.jsonl"));
    let args = [&["build-graph", "--pois", s(&pois), "--clicks", s(&clicks), "--sessions", s(&sessions), "--out", s(&out)], extra].concat();
    let printed = json(&ok(&args));
    let inspected = json(&ok(&["inspect-snapshot", "--graph", s(&out)]));
    assert_eq!(printed, inspected);
    inspected
}

#[test]
fn inspect_snapshot_matches_ingestion_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let v = build_graph(dir.path(), &[]);
    assert_eq!(v["pois"], 50);
    assert_eq!(v["queries"], 200);
    assert_eq!(v["nodes"], 250);
    assert_eq!(v["edges"], v["stats"]["edges"]);
    assert_eq!(v["edges"]["qcp"], 200);
}

#[test]
fn edge_types_are_removed_by_flags_alone() {
    let dir = tempfile::tempdir().unwrap();
    for (flag, name) in [("graph.use_qcp=false", "qcp"), ("graph.use_otd=false", "otd"), ("graph.use_pcp=false", "pcp")] {
        let v = build_graph(dir.path(), &["--set", flag]);
        assert_eq!(v["edges"][name], 0, "{flag}");
        for other in ["qcp", "otd", "pcp"].iter().filter(|&&o| o != name) {
            assert!(v["edges"][other].as_u64().unwrap() > 0, "{flag} removed {other}");
        }
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "graph.top_k_queries=1\ngraph.seed=5\n").unwrap();
    let from_file = build_graph(dir.path(), &["--config", s(&cfg)]);
    assert_eq!(from_file["config"]["top_k_queries"], 1);
    assert_eq!(from_file["config"]["seed"], 5);
    assert_eq!(from_file["queries"], 50);
    let overridden = build_graph(dir.path(), &["--config", s(&cfg), "--set", "graph.top_k_queries=2", "--seed", "9"]);
    assert_eq!(overridden["config"]["top_k_queries"], 2);
    assert_eq!(overridden["config"]["seed"], 9);
    assert_eq!(overridden["queries"], 100);
}

#[test]
fn failures_are_structured_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str, i32); 4] = [
        (&["inspect-snapshot", "--graph", "/nonexistent/graph.ggr"], "io", 1),
        (&["inspect-snapshot", "--graph", "x", "--set", "nosuch.key=1"], "config", 1),
        (&["sample-corpus", "--graph", "x", "--out", "y", "--walk-length", "0"], "config", 1),
        (&["frobnicate"], "usage", 2),
    ];
    for (args, kind, code) in cases {
        let out = Command::new(env!("CARGO_BIN_EXE_geolang")).current_dir(dir.path()).args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        assert!(out.stdout.is_empty());
        let err = json(&String::from_utf8_lossy(&out.stderr));
        assert_eq!(err["error"], kind, "{args:?}: {err}");
        assert!(err["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
}

#[test]
fn geocode_prints_lat_lng_and_token() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    build_graph(dir.path(), &[]);
    ok(&["sample-corpus", "--graph", s(&p("g.ggr")), "--out", s(&p("c.txt"))]);
    ok(&["mask-corpus", "--graph", s(&p("g.ggr")), "--corpus", s(&p("c.txt")), "--out", s(&p("e.gmx")), "--vocab", s(&p("v.txt"))]);
    ok(&["pretrain", "--examples", s(&p("e.gmx")), "--vocab", s(&p("v.txt")), "--out", s(&p("m.egl")), "--set", "pretrain.steps=3"]);
    let (ckpt, vocab) = (p("m.egl"), p("v.txt"));
    let model = ["--checkpoint", s(&ckpt), "--vocab", s(&vocab)];

    let line = ok(&[&["geocode"], &model[..], &["--text", "Yizi (Suzhou) Co."]].concat());
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields.len(), 3, "{line:?}");
    let lat: f64 = fields[0].parse().unwrap();
    let lng: f64 = fields[1].parse().unwrap();
    assert!((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lng));
    assert!(fields[2].chars().all(|c| c.is_ascii_hexdigit()));

    let texts = p("texts.txt");
    fs::write(&texts, "Yizi company\n\nbank near Songxiang\n").unwrap();
    let lines = ok(&[&["embed"], &model[..], &["--input", s(&texts), "--graph-mode"]].concat());
    let rows: Vec<Value> = lines.lines().map(json).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["text"], "bank near Songxiang");
    assert_eq!(rows[0]["embedding"].as_array().unwrap().len(), 64);

    let ranked = ok(&[&["analogy"], &model[..], &["--graph", s(&p("g.ggr")), "--a", "Yizi company", "--b", "company", "--c", "bank", "--top", "3"]].concat());
    let ranked: Vec<Value> = ranked.lines().map(json).collect();
    assert_eq!(ranked.len(), 3);
    assert!(ranked.windows(2).all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));

    // A vocabulary other than the training one is refused.
    fs::write(p("other.txt"), "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\nzebra\n").unwrap();
    let out = geolang(&["geocode", "--checkpoint", s(&p("m.egl")), "--vocab", s(&p("other.txt")), "--text", "x"]);
    assert!(!out.status.success());
    assert_eq!(json(&String::from_utf8_lossy(&out.stderr))["error"], "invalid_input");
}

#[test]
fn resumed_pretraining_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    build_graph(dir.path(), &[]);
    ok(&["sample-corpus", "--graph", s(&p("g.ggr")), "--out", s(&p("c.txt"))]);
    ok(&["mask-corpus", "--graph", s(&p("g.ggr")), "--corpus", s(&p("c.txt")), "--out", s(&p("e.gmx")), "--vocab", s(&p("v.txt"))]);
    let (examples, vocab) = (p("e.gmx"), p("v.txt"));
    let common = ["--examples", s(&examples), "--vocab", s(&vocab)];
    ok(&[&["pretrain"], &common[..], &["--out", s(&p("full.egl")), "--set", "pretrain.steps=8"]].concat());
    ok(&[&["pretrain"], &common[..], &["--out", s(&p("half.egl")), "--set", "pretrain.steps=8", "--stop-after", "4"]].concat());
    ok(&[&["pretrain"], &common[..], &["--out", s(&p("resumed.egl")), "--resume", s(&p("half.egl")), "--set", "pretrain.steps=8", "--log", s(&p("half.egl.log.jsonl"))]].concat());
    let full_log = fs::read_to_string(p("full.egl.log.jsonl")).unwrap();
    let joined_log = fs::read_to_string(p("half.egl.log.jsonl")).unwrap();
    assert_eq!(full_log, joined_log);
    assert_eq!(full_log.lines().count(), 8);
    let load = |n: &str| geolang::numerics::Checkpoint::from_bytes(&fs::read(p(n)).unwrap()).unwrap();
    let (full, resumed) = (load("full.egl"), load("resumed.egl"));
    assert_eq!(full.tensors, resumed.tensors);
}
