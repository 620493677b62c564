use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian: max |H - H^dagger| = {asymmetry:.3e}")]
    NonHermitianInput { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("not a density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid measurement: {0}")]
    InvalidPom(String),

    #[error("invalid quadrature settings: {0}")]
    InvalidSettings(String),

    #[error("invalid count data: {0}")]
    InvalidCounts(String),

    #[error("outcome {outcome} has frequency {frequency} but probability {probability:.3e}")]
    ZeroProbabilityOutcome {
        outcome: usize,
        frequency: f64,
        probability: f64,
    },

    #[error("orthogonalization found rank {found}, gram analysis reported {expected}")]
    RankDeficiencyMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
