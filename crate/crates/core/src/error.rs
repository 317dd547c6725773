use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("cloud sizes differ ({left} vs {right}); exact W2 needs equal-size clouds")]
    SizeMismatch { left: usize, right: usize },

    #[error(
        "cloud size {size} exceeds the exact solver cap {cap}; use w2_sliced or subsample to the cap"
    )]
    OverCap { size: usize, cap: usize },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("reference covariance is singular; relative entropy is infinite")]
    SingularCovariance,

    #[error("non-finite coefficient output at sample {sample}: {detail}")]
    NonFinite { sample: usize, detail: String },

    #[error(
        "state became non-finite at step {step} (particle {particle}); try the tamed_euler scheme"
    )]
    Explosion { step: u64, particle: usize },

    #[error("resolvent iteration did not converge for x = {x:?}, n = {n} (residual {residual:e}); drift may violate the one-sided bound")]
    ResolventDiverged { x: Vec<f64>, n: usize, residual: f64 },

    #[error("mollifier mass {mass} deviates from 1")]
    MollifierMass { mass: f64 },

    #[error("test function must be positive, got {value} at {x:?}")]
    NonPositiveFunction { value: f64, x: Vec<f64> },

    #[error("not enough points above the floor for a decay fit ({usable} usable, need 3)")]
    TooFewPoints { usable: usize },

    #[error("W2 between the inputs ({distance:e}) is below 10x the Monte Carlo floor ({floor:e})")]
    BelowFloor { distance: f64, floor: f64 },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
