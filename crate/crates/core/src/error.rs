use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("spectral gap {distance:e} is below tolerance {tol:e}")]
    DegenerateGap { distance: f64, tol: f64 },
    #[error("vectors are not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("energy operator is singular (min |eigenvalue| = {0:e})")]
    SingularEnergyOperator(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cluster is not closed under degeneracy: eigenvalue index {0} is degenerate with the selection")]
    IncompleteCluster(usize),
    #[error("degeneracy is not lifted at first order (gap {0:e})")]
    DegeneracyNotLifted(f64),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("reduced space is empty")]
    EmptySpace,
    #[error("seed vectors do not span the cluster space")]
    BadSeed,
    #[error("no reduced eigenpair reproduces exact mode {0} at lambda = 0")]
    SpectralPollution(usize),
    #[error("branch continuation is ambiguous at lambda = {lam} (max overlap {overlap:.3})")]
    BranchCrossing { lam: f64, overlap: f64 },
    #[error("gauge alignment impossible: <psi, phi> vanishes")]
    GaugeFailure,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateGap { .. }
            | Error::SpectralPollution(_)
            | Error::BranchCrossing { .. }
            | Error::DegeneracyNotLifted(_)
            | Error::SingularEnergyOperator(_)
            | Error::GaugeFailure => 4,
            _ => 2,
        }
    }
}
