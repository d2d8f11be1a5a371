use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Variants fall into two families: precondition failures (bad input,
/// unsupported configuration, infeasible geometry) and numerical failures
/// where a computation ran but could not certify its own accuracy. Use
/// [`Error::is_unconverged`] to tell them apart.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("frequency is rational within working precision (expansion terminated at depth {depth})")]
    RationalFrequency { depth: usize },

    #[error("need at least {need} convergents, have {have}")]
    TooFewConvergents { have: usize, need: usize },

    #[error("infeasible continued-fraction schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("enumeration of {size} points exceeds budget {budget}")]
    BudgetExceeded { size: u128, budget: u128 },

    #[error("energy {z} is within solver tolerance of the spectrum")]
    NearSpectrum { z: Complex64 },

    #[error("wave packet reached the box edge: tail mass {tail_mass:e} exceeds {limit:e}")]
    BoxBreach { tail_mass: f64, limit: f64 },

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("theta grid spacing {spacing:e} is coarser than target/10 = {limit:e}")]
    GridTooCoarse { spacing: f64, limit: f64 },

    #[error("domain guard: {0}")]
    DomainGuard(String),

    #[error("unconverged: {0}")]
    Unconverged(String),
}

impl Error {
    /// True for failures of numerical convergence rather than of input.
    pub fn is_unconverged(&self) -> bool {
        matches!(self, Error::Unconverged(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
