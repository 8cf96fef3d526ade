use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedError>;

/// Errors raised by the simulator. Variants follow the failure class rather
/// than the module that produced them, so callers can map them to exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedError {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// Two parameter vectors with different layouts were combined.
    #[error("layout mismatch: {0}")]
    Layout(String),

    /// Experiment or strategy configuration cannot be honoured.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is malformed (label out of range, zero step count, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Model or policy state is invalid (non-finite weights, bad loss baseline).
    #[error("state error: {0}")]
    State(String),

    /// Local training produced a non-finite or exploding loss.
    #[error("training diverged for collaborator {collaborator} in round {round}: loss {loss}")]
    Divergence {
        collaborator: String,
        round: usize,
        loss: f64,
    },

    /// A round could not be aggregated.
    #[error("round error: {0}")]
    Round(String),
}

impl FedError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, FedError::Divergence { .. })
    }
}
