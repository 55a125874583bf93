//! `geolang` command-line entry point.
//!
//! Every artifact is derived only from its inputs and the resolved
//! configuration, so two runs with the same flags produce identical bytes.
//! Failures print one JSON object `{"error": kind, "message": text}` to
//! stderr and exit nonzero.

mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geolang::config::parse_kv;
use geolang::pipeline::PipelineConfig;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "geolang", version, about = "Geography-aware language model pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `section.key=value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every stage; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingests POI, click and session records into a graph snapshot.
    BuildGraph {
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Samples one random-walk document per graph node.
    SampleCorpus {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        walk_length: Option<usize>,
        #[arg(long)]
        lambda_qcp: Option<f64>,
        #[arg(long)]
        lambda_otd: Option<f64>,
        #[arg(long)]
        lambda_pcp: Option<f64>,
    },
    /// Builds the vocabulary and masks a walk corpus into training examples.
    MaskCorpus {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Vocabulary output, one token per line.
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Pretrains on masked examples.
    Pretrain {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continues from this checkpoint's parameters and optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// JSON-lines step log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Ends this invocation after this many total steps; the schedule
        /// still spans `pretrain.steps`, so `--resume` continues the run.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Fine-tunes a pretrained checkpoint on a labeled dataset.
    Finetune {
        task: FinetuneTask,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class count for `classify`; defaults to the largest label plus one.
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Scores a checkpoint on a labeled dataset.
    Eval {
        task: EvalTask,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        /// Graph snapshot supplying recommendation candidates.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Cutoff for Acc@K.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Distance threshold for Acc@N km.
        #[arg(long, default_value_t = 3.0)]
        km: f64,
    },
    /// Prints `[CLS]` embeddings of texts, one JSON object per line.
    Embed {
        #[command(flatten)]
        model: ModelArgs,
        /// Texts, one per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = NodeKind::Poi)]
        node_type: NodeKind,
        /// Fused graph-mode embedding instead of the encoder output.
        #[arg(long)]
        graph_mode: bool,
    },
    /// Prints `lat lng token` for a text.
    Geocode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        text: String,
    },
    /// Ranks graph POIs by similarity to `a - b + c`.
    Analogy {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long)]
        c: String,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Prints node and edge counts of a graph snapshot.
    InspectSnapshot {
        #[arg(long)]
        graph: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FinetuneTask {
    Classify,
    Match,
    Tag,
    Geocode,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Classify,
    Match,
    Tag,
    Geocode,
    Recommend,
}

#[derive(Clone, Copy, ValueEnum)]
enum NodeKind {
    Poi,
    Query,
}

/// Defaults, then the config file, then `--set`, then `--seed`.
fn resolve_config(g: &Global) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::parse(&run::read_text(path)?)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&parse_kv(&g.set.join("\n"))?)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::BuildGraph { pois, clicks, sessions, out } => run::build_graph(&cfg, &pois, &clicks, sessions.as_deref(), &out),
        Command::SampleCorpus { graph, out, walk_length, lambda_qcp, lambda_otd, lambda_pcp } => {
            let w = &mut cfg.walk;
            w.walk_length = walk_length.unwrap_or(w.walk_length);
            w.lambda_qcp = lambda_qcp.unwrap_or(w.lambda_qcp);
            w.lambda_otd = lambda_otd.unwrap_or(w.lambda_otd);
            w.lambda_pcp = lambda_pcp.unwrap_or(w.lambda_pcp);
            run::sample_corpus(&cfg, &graph, &out)
        }
        Command::MaskCorpus { graph, corpus, out, vocab } => run::mask_corpus(&cfg, &graph, &corpus, &out, &vocab),
        Command::Pretrain { examples, vocab, out, resume, log, stop_after } => {
            run::pretrain(&cfg, &examples, &vocab, &out, resume.as_deref(), log.as_deref(), stop_after)
        }
        Command::Finetune { task, model, data, out, classes } => run::finetune(&cfg, task, &model, &data, &out, classes),
        Command::Eval { task, model, data, graph, k, km } => run::eval(task, &model, &data, graph.as_deref(), k, km),
        Command::Embed { model, input, node_type, graph_mode } => run::embed(&model, &input, node_type, graph_mode),
        Command::Geocode { model, text } => run::geocode(&model, &text),
        Command::Analogy { model, graph, a, b, c, top } => run::analogy(&model, &graph, [&a, &b, &c], top),
        Command::InspectSnapshot { graph } => run::inspect_snapshot(&graph),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error::report("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error::report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
