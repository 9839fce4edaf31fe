//! Olaf: a discrete-event toolkit for studying in-network opportunistic
//! aggregation of asynchronous model updates.
//!
//! The crate is organized around the pieces of the system:
//!
//! * [`types`] — identifiers, fixed-point time, updates and queue feedback
//! * [`queue`] — the opportunistic-aggregation queue discipline and a FIFO baseline
//! * [`endpoint`] — workers (feedback-driven transmission control) and the parameter server
//! * [`sim`] — the deterministic event engine, topologies and run metrics
//! * [`aom`] — age-of-model sawtooth, peak and average computations, Jain fairness
//! * [`verify`] — bounded exploration of transmission-control decisions against
//!   a cross-cluster age-fairness objective
//! * [`wire`] — bit-exact update/ACK frame codec

pub mod aom;
pub mod endpoint;
pub mod queue;
pub mod sim;
pub mod types;
pub mod verify;
pub mod wire;

use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum OlafError {
    #[error("gradient dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("no update is in service")]
    NothingInService,

    #[error("queue feedback reports zero active clusters")]
    NoActiveClusters,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decision trace inconsistent with schedule: {0}")]
    InconsistentDecisions(String),

    #[error("branch bound too large: {gated} gated transmission opportunities exceed cap {cap}")]
    BranchCapExceeded { gated: u32, cap: u32 },

    #[error("horizon must be positive")]
    ZeroHorizon,
}
