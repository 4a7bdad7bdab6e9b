use thiserror::Error;

/// Errors produced by every stage of the analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("rule assignment: {0}")]
    RuleAssignment(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("vertex {0} is isolated")]
    IsolatedVertex(usize),

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst:.3e})")]
    NotConverged {
        iterations: usize,
        worst: f64,
        residuals: Vec<f64>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
