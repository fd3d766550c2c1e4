use thiserror::Error;

/// Errors raised by the simulator. Each variant belongs to one module so the
/// CLI can report a module-qualified message.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("signal: grid mismatch: {0}")]
    GridMismatch(String),
    #[error("signal: aliasing: {0}")]
    Aliasing(String),
    #[error("signal: invalid filter: {0}")]
    InvalidFilter(String),
    #[error("signal: invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("modulators: {0}")]
    Modulator(String),
    #[error("transmitter: {0}")]
    Transmitter(String),
    #[error("link: calibration infeasible: {0}")]
    Calibration(String),
    #[error("link: {0}")]
    Link(String),
    #[error("aggregator: geometry: {0}")]
    Geometry(String),
    #[error("receiver: configuration: {0}")]
    ReceiverConfig(String),
    #[error("receiver: insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("tuner: infeasible target: {0}")]
    Infeasible(String),
    #[error("scenario: invalid field `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True when the error stems from the user's configuration rather than
    /// from the pipeline itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
