use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A configuration value violates one of its documented invariants.
    #[error("invalid {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// An argument to a pure function lies outside its domain.
    #[error("{name} = {value} is outside the domain {domain}")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// Every detection probability underflowed; the channel produces no usable clicks.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    /// No signal coincidences, so ratios against s_mu are undefined.
    #[error("no signal coincidences (s_mu = 0)")]
    NoSignal,

    /// Decoy settings that do not satisfy the strict ordering the estimator needs.
    #[error("decoy ordering: {0}")]
    DecoyOrdering(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// A coincidence handed to bit extraction lacks a detector announcement.
    #[error("port {port} has no detector announcement")]
    MissingAnnouncement { port: usize },

    #[error("optimizer: {0}")]
    Optimizer(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
