use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dressed ladder requires an undriven system, got eta = {0} rad/us")]
    DrivenLadder(f64),

    #[error("steady state is not unique (estimated null-space dimension {0})")]
    NonUniqueSteadyState(usize),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("eigenvector matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditionedEigenbasis(f64),

    #[error("state is not physical: {0}")]
    NotPhysical(String),

    #[error("normalization denominator vanishes ({0:.3e})")]
    ZeroDenominator(f64),

    #[error("correlator has a non-negligible imaginary part ({0:.3e})")]
    ImaginaryResidue(f64),

    #[error("intermediate-state memory {requested} bytes exceeds the cap of {cap} bytes")]
    MemoryBudgetExceeded { requested: usize, cap: usize },

    #[error("per-step jump probability {0:.3} exceeds 0.1; reduce dt")]
    StepTooLarge(f64),

    #[error("state norm collapsed to zero at t = {0} ns")]
    StateCollapseToZero(f64),

    #[error("at least two trajectories are needed for a standard error, got {0}")]
    StatisticalUnderflow(usize),

    #[error("ensemble grid is empty")]
    EmptyGrid,

    #[error("smoothing kernel radius {radius} exceeds grid size {size}")]
    KernelLargerThanGrid { radius: usize, size: usize },

    #[error("grid is not square on identical axes")]
    NonSquareGrid,

    #[error("analysis window holds {0} samples, at least 8 are required")]
    WindowTooShort(usize),

    #[error("spectrum has no resolvable peak")]
    DegenerateSpectrum,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
