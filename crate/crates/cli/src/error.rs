use geolang::config::ConfigError;
use geolang::geograph::GraphError;
use geolang::masker::MaskFileError;
use geolang::model::{ModelError, PretrainError};
use geolang::numerics::CheckpointError;
use geolang::pipeline::PipelineError;
use geolang::sampler::{CorpusError, WalkConfigError};
use geolang::tasks::TaskError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Walk(#[from] WalkConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Examples(#[from] MaskFileError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Graph(_) => "graph",
            CliError::Pipeline(_) => "pipeline",
            CliError::Walk(_) => "config",
            CliError::Corpus(_) => "corpus",
            CliError::Examples(_) => "examples",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Model(_) => "model",
            CliError::Pretrain(_) => "pretrain",
            CliError::Task(_) => "task",
            CliError::Invalid(_) => "invalid_input",
        }
    }
}

pub fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.trim_end() });
    eprintln!("{line}");
}
