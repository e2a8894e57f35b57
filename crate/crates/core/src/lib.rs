//! Simulation and analysis toolkit for parallel Bayesian multiphase estimation.
//!
//! A single (d+1)-dimensional ancilla qudit interrogates `d` eigenphases of a
//! unitary at once. Measurement outcomes feed a dense-grid Bayesian posterior
//! over the phase hypercube; the multiround protocol doubles the number of
//! controlled-gate applications each round and cuts the domain once the
//! posterior is localized, reaching Heisenberg-limited sensitivity in the
//! total resource count.
//!
//! Module map:
//!
//! - [`circuit`]: exact measurement statistics of the qudit circuit (closed
//!   form, state-vector and density-matrix oracles, dephasing channel,
//!   optical beam-splitter and NOON-state realizations).
//! - [`bayes`]: the dense-grid posterior with circular-mean estimator,
//!   confidence mass, covariance, and domain cutting.
//! - [`protocol`]: the multiround estimation loop against simulated
//!   measurements, with resource accounting and record persistence.
//! - [`campaign`]: seeded Monte Carlo campaigns and the statistical
//!   post-processing (plateau fits, correlation ratios, error rates,
//!   noise-crossover scaling, sequential-baseline comparison).

pub mod bayes;
pub mod campaign;
pub mod circuit;
pub mod linalg;
pub mod phase;
pub mod protocol;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: need at least {min} register phase(s), got {got}")]
    InvalidDimension { got: usize, min: usize },

    #[error("grid too coarse: need at least {min} points per axis, got {got}")]
    Resolution { got: usize, min: usize },

    #[error("invalid dephasing rate {rate} for register {index}: rates must be nonnegative")]
    InvalidNoise { rate: f64, index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("constructed operator is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("posterior mass vanished while updating on outcome {outcome}")]
    DegenerateUpdate { outcome: usize },

    #[error("no posterior mass inside the cut hypercube")]
    DegenerateCut,

    #[error("circular mean undefined on axis {axis}: resultant length {resultant:.3e}")]
    UndefinedMean { axis: usize, resultant: f64 },

    #[error("covariance violates positive semidefiniteness: n^T V n = {value:.3e}")]
    NotPositiveSemidefinite { value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("malformed record data: {0}")]
    ParseRecords(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use bayes::{CovarianceMatrix, PosteriorGrid};
pub use circuit::{CircuitSpec, NoiseModel};
pub use phase::PhasePoint;
pub use protocol::{RoundRecord, RunConfig, RunOutcome};
