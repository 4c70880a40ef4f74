use thiserror::Error;

/// Errors produced by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lexicon configuration: {0}")]
    LexiconConfig(String),

    #[error("condition {condition} does not apply to task {task}")]
    ConditionArity { task: String, condition: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown edge {from} -> {to}")]
    UnknownEdge { from: String, to: String },

    #[error("invalid graph positions: {0}")]
    Positions(String),

    #[error("path count exceeds cap of {cap}")]
    PathCap { cap: u64 },

    #[error("path does not match graph: {0}")]
    PathMismatch(String),

    #[error("cannot refine path: {0}")]
    Refine(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("templates differ within dataset: {0}")]
    MixedTemplates(String),

    #[error("compression scheme mismatch: {0}")]
    Scheme(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
