//! Sparse exponential surrogate of the objective.
//!
//! Samples on parallel lines `k * delta + shift_i` are fitted one line at a
//! time by exponential sums ([`pencil`]); the per-line models are then blended
//! across the plane normal to `delta` by bivariate Chebyshev cardinal
//! functions ([`blend`]).

pub mod blend;
pub mod chebyshev;
pub mod pencil;

pub use blend::{
    build_blended, line_coordinates, normal_projection, select_pair, validate_model, BlendedModel,
    CoordPair, PqScaling, SamplingPlan, ValidationReport,
};
pub use chebyshev::{graded_basis, BasisTerm};
pub use pencil::{
    fit_line_exponential, FitWarning, LineExpModel, LineSamples, C64, DEFAULT_SVD_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpError {
    #[error("line {line}: samples must be finite")]
    NonFinite { line: usize },
    #[error("line {line}: {samples} samples, at least {needed} needed")]
    InsufficientSamples {
        line: usize,
        samples: usize,
        needed: usize,
    },
    #[error("line {line}: Hankel matrix has numerical rank {rank}, below the requested order {requested}")]
    Rank {
        line: usize,
        requested: usize,
        rank: usize,
    },
    #[error("sampling direction must be nonzero and finite")]
    ZeroDirection,
    #[error("coordinate pair {pair:?} is degenerate for this direction")]
    DegeneratePair { pair: CoordPair },
    #[error("{lines} line models for {shifts} planned lines")]
    PlanMismatch { lines: usize, shifts: usize },
    #[error("collocation matrix is singular (condition number {condition:e})")]
    CollocationSingular { condition: f64 },
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}
