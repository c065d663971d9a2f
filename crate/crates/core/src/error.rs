use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("inconsistent sector constraint: {0}")]
    InconsistentConstraint(String),

    #[error("sector too large: {size} states exceeds the limit of {limit}")]
    SectorTooLarge { size: u128, limit: u128 },

    #[error("basis does not match the Hamiltonian: {0}")]
    BasisMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "eigensolver did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("operator is not Hermitian (imaginary part {0:.3e})")]
    NotHermitian(f64),

    #[error("system size {size} exceeds the engine limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("wavefunction amplitude vanishes at {0}")]
    ZeroAmplitude(String),

    #[error("wavefunction is incompatible with the model: {0}")]
    Incompatible(String),

    #[error("sample file {path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("postselection left no samples")]
    EmptySelection,

    #[error("initial-state source exhausted: {0}")]
    SourceExhausted(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("transition matrix is not reversible (max detailed-balance violation {0:.3e})")]
    NotReversible(f64),

    #[error("probability drift {0:.3e} exceeds tolerance")]
    ProbabilityDrift(f64),

    #[error("linear solve failed after regularization retries")]
    SingularSystem,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
