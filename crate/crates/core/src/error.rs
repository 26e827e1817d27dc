use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AidaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AidaError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("precondition violated in {op}: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("degenerate input to {op}: {detail}")]
    DegenerateInput { op: &'static str, detail: String },

    /// A non-finite gradient or loss was produced.
    #[error("training diverged at iteration {iteration}: {detail}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Divergence {
        iteration: u64,
        detail: String,
        last_good: Option<PathBuf>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{field}`: {detail}")]
    Validation { field: String, detail: String },

    #[error("hierarchy error at leaf `{leaf}`: {detail}")]
    Hierarchy { leaf: String, detail: String },

    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AidaError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        AidaError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn pre(op: &'static str, detail: impl Into<String>) -> Self {
        AidaError::Precondition {
            op,
            detail: detail.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            AidaError::Dimension { .. } => "dimension",
            AidaError::Precondition { .. } => "precondition",
            AidaError::DegenerateInput { .. } => "degenerate_input",
            AidaError::Divergence { .. } => "divergence",
            AidaError::Config(_) => "config",
            AidaError::Validation { .. } => "validation",
            AidaError::Hierarchy { .. } => "hierarchy",
            AidaError::UnknownLabel { .. } => "unknown_label",
            AidaError::Parse { .. } => "parse",
            AidaError::Checkpoint(_) => "checkpoint",
            AidaError::Io(_) => "io",
            AidaError::Json(_) => "json",
        }
    }
}
