//! Analytic key-rate engine and event-level simulator for multi-field
//! conference key agreement over a chain of interfering ports.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decoy;
pub mod error;
pub mod keyrate;
pub mod matching;
pub mod model;
pub mod montecarlo;
pub mod optimizer;
pub mod photonstats;
pub mod special;

pub use error::{Error, Result};
pub use model::{
    Bundle, ChannelParams, ClampNote, CoincidenceStats, DecoyBounds, PhaseErrorSource, RateReport,
    SecurityParams, SourceConfig,
};
pub use montecarlo::{ConsistencyReport, TrialSummary};
