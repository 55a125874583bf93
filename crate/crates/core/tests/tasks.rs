mod common;

use common::tiny_config;
use geolang::dgg::{geocode_point, LatLng, MultiLevelCode};
use geolang::geograph::NodeType;
use geolang::masker::{Vocab, WordTokenizer};
use geolang::model::{Model, ModelConfig};
use geolang::numerics::Mat;
use geolang::tasks::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
}

fn random_crf(t: usize, rng: &mut ChaCha8Rng) -> CrfParams {
    CrfParams { transitions: random(t, t, rng), start: random(1, t, rng), stop: random(1, t, rng) }
}

fn toy_model(texts: &[&str], hidden: usize) -> (Model, Vocab) {
    let vocab = Vocab::build(&WordTokenizer, texts.iter().copied());
    let model = Model::new(ModelConfig { init_std: 0.1, ..tiny_config(hidden, 2, vocab.len()) }).unwrap();
    (model, vocab)
}

#[test]
fn crf_single_token_decodes_to_total_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = random_crf(4, &mut rng);
        let em = random(1, 4, &mut rng);
        let total: Vec<f64> = (0..4).map(|j| em[[0, j]] + p.start[[0, j]] + p.stop[[0, j]]).collect();
        let best = (0..4).fold(0, |b, j| if total[j] > total[b] { j } else { b });
        assert_eq!(viterbi(&em, &p).unwrap().0, vec![best]);
    }
}

fn pick(q: &mut CrfParams, which: usize) -> &mut Mat {
    match which {
        0 => &mut q.transitions,
        1 => &mut q.start,
        _ => &mut q.stop,
    }
}

#[test]
fn crf_nll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (l, t) = (5, 3);
    let p = random_crf(t, &mut rng);
    let em = random(l, t, &mut rng);
    let gold = [0, 2, 2, 1, 0];
    let (_, g) = crf_nll(&em, &p, &gold).unwrap();
    let h = 1e-6;
    let nll = |em: &Mat, p: &CrfParams| crf_nll(em, p, &gold).unwrap().0;
    let mut worst = 0.0f64;
    for i in 0..l {
        for j in 0..t {
            let (mut up, mut down) = (em.clone(), em.clone());
            up[[i, j]] += h;
            down[[i, j]] -= h;
            worst = worst.max(((nll(&up, &p) - nll(&down, &p)) / (2.0 * h) - g.emissions[[i, j]]).abs());
        }
    }
    for (which, grad) in [(0, &g.transitions), (1, &g.start), (2, &g.stop)] {
        for ((r, c), &a) in grad.indexed_iter() {
            let (mut up, mut down) = (p.clone(), p.clone());
            pick(&mut up, which)[[r, c]] += h;
            pick(&mut down, which)[[r, c]] -= h;
            worst = worst.max(((nll(&em, &up) - nll(&em, &down)) / (2.0 * h) - a).abs());
        }
    }
    assert!(worst < 1e-7, "{worst}");
}

#[test]
fn crf_rejects_mismatched_tags() {
    let p = CrfParams::zeros(3);
    assert!(matches!(viterbi(&Array2::zeros((2, 4)), &p), Err(TaskError::TagSet(_))));
    assert!(matches!(crf_nll(&Array2::zeros((2, 3)), &p, &[0]), Err(TaskError::TagSet(_))));
}

proptest! {
    #[test]
    fn partition_bounds_every_path(seed in 0u64..1000, l in 1usize..5, t in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_crf(t, &mut rng);
        let em = random(l, t, &mut rng);
        let z = crf_log_partition(&em, &p).unwrap();
        let path: Vec<usize> = (0..l).map(|_| rng.random_range(0..t)).collect();
        prop_assert!(z >= crf_path_score(&em, &p, &path) - 1e-12);
        let (best, score) = viterbi(&em, &p).unwrap();
        prop_assert!((crf_path_score(&em, &p, &best) - score).abs() < 1e-12);
        prop_assert!(z >= score);
    }

    #[test]
    fn distance_accuracy_is_monotone_in_n(seed in 0u64..1000, a in 0.1f64..5.0, b in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = |rng: &mut ChaCha8Rng| -> Vec<LatLng> {
            (0..30).map(|_| LatLng::new(31.0 + rng.random_range(-0.05..0.05), 120.0 + rng.random_range(-0.05..0.05)).unwrap()).collect()
        };
        let (p, g) = (pts(&mut rng), pts(&mut rng));
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(acc_at_n_km(&p, &g, lo) <= acc_at_n_km(&p, &g, hi));
        let (mut rp, mut rg) = (p.clone(), g.clone());
        rp.reverse();
        rg.reverse();
        prop_assert_eq!(acc_at_n_km(&p, &g, hi), acc_at_n_km(&rp, &rg, hi));
    }

    #[test]
    fn rank_accuracy_is_monotone_in_k(ranks in prop::collection::vec(1usize..60, 1..40), a in 1usize..60, b in 1usize..60) {
        prop_assert!(acc_at_k(&ranks, a.min(b)) <= acc_at_k(&ranks, a.max(b)));
        let mut rev = ranks.clone();
        rev.reverse();
        prop_assert_eq!(acc_at_k(&ranks, a), acc_at_k(&rev, a));
    }

    #[test]
    fn entity_f1_is_order_invariant(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tags = ["O", "B-road", "I-road", "B-poi", "I-poi"];
        let seq = |rng: &mut ChaCha8Rng| -> Vec<String> { (0..6).map(|_| tags[rng.random_range(0..5)].to_string()).collect() };
        let gold: Vec<Vec<String>> = (0..8).map(|_| seq(&mut rng)).collect();
        let pred: Vec<Vec<String>> = (0..8).map(|_| seq(&mut rng)).collect();
        let f = entity_f1(&gold, &pred);
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.reverse();
        p2.reverse();
        prop_assert_eq!(f, entity_f1(&g2, &p2));
        prop_assert_eq!(entity_f1(&gold, &gold).f1, 1.0);
    }
}

#[test]
fn tag_set_names_round_trip() {
    let t = TagSet::from_tags(["B-road", "I-road", "O", "B-area", "I-poi"]);
    assert_eq!(t.types(), ["area", "poi", "road"]);
    assert_eq!(t.len(), 7);
    for i in 0..t.len() {
        assert_eq!(t.index(&t.name(i)), Some(i));
    }
    assert_eq!(t.index("B-street"), None);
}

#[test]
fn ranking_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cands = random(1000, 16, &mut rng);
    let q: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ranked = rank_by_cosine(&q, &cands);
    let mut brute: Vec<(usize, f64)> = (0..1000)
        .map(|i| {
            let r = cands.row(i);
            let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            (i, dot / (r.dot(&r).sqrt() * q.iter().map(|x| x * x).sum::<f64>().sqrt()))
        })
        .collect();
    brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    assert_eq!(ranked.iter().map(|r| r.0).collect::<Vec<_>>(), brute.iter().map(|r| r.0).collect::<Vec<_>>());

    // A candidate equal to the query ranks first.
    let mut with_gold = cands.clone();
    with_gold.row_mut(417).assign(&ndarray::Array1::from(q.clone()));
    assert_eq!(rank_by_cosine(&q, &with_gold)[0].0, 417);
    let rec = Recommender { ids: (0..1000).map(|i| i.to_string()).collect(), embeddings: cands };
    let rank = rec.gold_rank(&q, "3").unwrap();
    assert_eq!(acc_at_k(&[rank], 1000), 1.0);
    assert!(matches!(rec.gold_rank(&q, "nope"), Err(TaskError::GoldMissing(_))));
}

#[test]
fn analogy_on_constructed_embeddings() {
    let e = Array2::<f64>::eye(6);
    let row = |i: usize| e.row(i).to_vec();
    // a - b + c where c is the target itself
    assert_eq!(analogy(&row(1), &row(1), &row(4), &e, 10)[0].0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random(40, 8, &mut rng);
    let r = |i: usize| m.row(i).to_vec();
    let self_query = analogy(&r(3), &r(3), &r(7), &m, 10);
    let neighbors = rank_by_cosine(&r(7), &m);
    assert_eq!(self_query.iter().map(|x| x.0).collect::<Vec<_>>(), neighbors[..10].iter().map(|x| x.0).collect::<Vec<_>>());
    let scaled = &m * 3.5;
    let s = |i: usize| scaled.row(i).to_vec();
    let a = analogy(&r(1), &r(2), &r(3), &m, 10);
    let b = analogy(&s(1), &s(2), &s(3), &scaled, 10);
    assert_eq!(a.iter().map(|x| x.0).collect::<Vec<_>>(), b.iter().map(|x| x.0).collect::<Vec<_>>());
}

#[test]
fn decoded_predictions_and_fallback() {
    let point = LatLng::new(31.2989, 120.5853).unwrap();
    let code = geocode_point(point);
    let p = decode_prediction(&code).unwrap();
    assert_eq!((p.level, p.fallback), (22, false));
    assert!(haversine_km(&p.location, &point) < 0.01);

    // Break the parent chain inside the last group: levels 1..=20 survive.
    let mut classes = code.classes();
    classes[32] = (classes[32] + 1) % 16;
    let p = decode_prediction(&MultiLevelCode::from_classes(&classes).unwrap()).unwrap();
    assert!(p.fallback && p.level == 20, "{p:?}");
    assert!(haversine_km(&p.location, &point) < 0.1);

    // 'f' is not a cube face, so even level 1 fails.
    let mut classes = code.classes();
    classes[2] = 15;
    assert!(matches!(decode_prediction(&MultiLevelCode::from_classes(&classes).unwrap()), Err(TaskError::Undecodable(_))));
}

#[test]
fn separable_classes_are_learned() {
    let rows = [("bus route 5", 0), ("bus route 12", 0), ("bus line to airport", 0), ("coffee near me", 1), ("cheap coffee shop", 1), ("coffee open now", 1)];
    let texts: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let (model, vocab) = toy_model(&texts, 16);
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let data: Vec<LabeledSequence> = rows.iter().map(|&(t, c)| LabeledSequence { text: t.into(), label: Label::Class(c) }).collect();
    let cfg = FineTuneConfig { steps: 60, batch: 6, lr: 3e-3, ..Default::default() };
    let (_, acc) = finetune_classifier(model, &enc, &data, 2, &cfg).unwrap();
    assert_eq!(acc.value, 1.0);
    assert!(matches!(finetune_classifier(Model::new(tiny_config(8, 2, vocab.len())).unwrap(), &enc, &[], 2, &cfg), Err(TaskError::EmptyDataset)));
}

#[test]
fn constant_predictor_scores_a_quarter() {
    let texts = ["a b", "c d", "e f", "g h"];
    let (model, vocab) = toy_model(&texts, 8);
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let mut clf = Classifier::new(model, 4, 0).unwrap();
    let w = clf.model.store.id("cls.w").unwrap();
    clf.model.store.value_mut(w).fill(0.0);
    let examples: Vec<_> = texts.iter().map(|t| enc.single(NodeType::Query, t)).collect();
    let report = clf.accuracy(&examples, &[0, 1, 2, 3]).unwrap();
    assert_eq!((report.metric.as_str(), report.value, report.n), ("accuracy", 0.25, 4));
}

#[test]
fn matching_uses_four_relevance_classes() {
    let pairs = [("yizi food", "Yizi Food Co.", Relevance::Exact), ("yizi", "Yizi Food Co.", Relevance::High), ("food", "Yizi Food Co.", Relevance::Weak), ("bank", "Yizi Food Co.", Relevance::Irrelevant)];
    let data: Vec<LabeledSequence> = pairs.iter().map(|&(q, p, r)| LabeledSequence { text: matching_text(q, p), label: Label::Relevance(r) }).collect();
    let texts: Vec<&str> = data.iter().map(|d| d.text.as_str()).collect();
    let (model, vocab) = toy_model(&texts, 16);
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let cfg = FineTuneConfig { steps: 80, batch: 4, lr: 3e-3, ..Default::default() };
    let (clf, acc) = finetune_classifier(model, &enc, &data, 4, &cfg).unwrap();
    assert_eq!(clf.classes, 4);
    assert_eq!(acc.value, 1.0);
}

#[test]
fn frozen_encoder_only_moves_the_head() {
    let rows = [("bus route", 0), ("coffee shop", 1)];
    let texts: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let (model, vocab) = toy_model(&texts, 8);
    let before = model.store.clone();
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let data: Vec<LabeledSequence> = rows.iter().map(|&(t, c)| LabeledSequence { text: t.into(), label: Label::Class(c) }).collect();
    let cfg = FineTuneConfig { steps: 10, batch: 2, train_encoder: false, ..Default::default() };
    let (clf, _) = finetune_classifier(model, &enc, &data, 2, &cfg).unwrap();
    for id in before.ids() {
        assert_eq!(clf.model.store.value(id), before.value(id), "{}", before.name(id));
    }
    let w = clf.model.store.id("cls.w").unwrap();
    assert!(clf.model.store.value(w).iter().any(|&x| x.abs() > 1e-6));
}

#[test]
fn tagger_fits_a_small_chunking_set() {
    let rows = [
        ("No.1 Songxiang Road Gusu District", vec!["B-poi", "B-road", "I-road", "B-area", "I-area"]),
        ("Gusu District Renmin Road", vec!["B-area", "I-area", "B-road", "I-road"]),
        ("Renmin Road No.8", vec!["B-road", "I-road", "B-poi"]),
        ("Wuzhong District", vec!["B-area", "I-area"]),
    ];
    let data: Vec<LabeledSequence> = rows.iter().map(|(t, tags)| LabeledSequence { text: t.to_string(), label: Label::Tags(tags.iter().map(|s| s.to_string()).collect()) }).collect();
    let texts: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let (model, vocab) = toy_model(&texts, 16);
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let cfg = FineTuneConfig { steps: 120, batch: 4, lr: 5e-3, ..Default::default() };
    let (tagger, f1) = finetune_tagger(model, &enc, &data, &cfg).unwrap();
    assert_eq!(f1.f1, 1.0, "{f1:?}");
    assert_eq!(tagger.tags.types(), ["area", "poi", "road"]);
    let bad = [LabeledSequence { text: "Renmin Road".into(), label: Label::Tags(vec!["O".into()]) }];
    assert!(matches!(tagger.evaluate(&enc, &bad), Err(TaskError::Example { .. })));
}

#[test]
fn geocoder_memorizes_training_addresses() {
    let rows = [
        ("No.1 Songxiang Road Gusu", 31.3120, 120.6190),
        ("Renmin Road Wuzhong", 31.2630, 120.6300),
        ("Jinji Lake East Shore", 31.3150, 120.7100),
        ("Shantang Street Old Town", 31.3200, 120.5920),
    ];
    let data: Vec<GeocodingRecord> = rows.iter().map(|&(t, lat, lng)| GeocodingRecord { text: t.into(), lat, lng }).collect();
    let texts: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let (model, vocab) = toy_model(&texts, 16);
    let enc = TextEncoder { vocab: &vocab, tokenizer: &WordTokenizer };
    let cfg = FineTuneConfig { steps: 300, batch: 4, lr: 5e-3, ..Default::default() };
    let (geo, acc) = finetune_geocoder(model, &enc, &data, &cfg).unwrap();
    assert_eq!(acc.value, 1.0, "{acc:?}");
    let preds = geo.predict(&enc, &texts).unwrap();
    for (p, r) in preds.iter().zip(&data) {
        let p = p.as_ref().unwrap();
        assert_eq!(p.code, geocode_point(LatLng::new(r.lat, r.lng).unwrap()).to_string());
        assert!(!p.fallback);
    }
}

#[test]
fn metric_reports_are_json_lines() {
    let mut out = Vec::new();
    MetricReport::new("acc@3km", 0.5, 4).write_json(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "{\"metric\":\"acc@3km\",\"value\":0.5,\"n\":4}\n");
}
