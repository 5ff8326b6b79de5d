//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A point that was required to lie on the manifold does not.
    #[error("point {point:?} is not on the {manifold} (residual {residual:.3e})")]
    OffManifold {
        manifold: &'static str,
        point: Vec<f64>,
        residual: f64,
    },

    /// Invalid argument or configuration value.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A Gaussian measure was requested with a degenerate covariance mode.
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    /// Two measures or functions live on different spectral bases.
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    /// Exact optimal transport was asked for more atoms than the budget allows.
    #[error(
        "atom budget exceeded: instance has {atoms} atoms, exact solver accepts at most \
         {budget}; use the map-bound method instead"
    )]
    AtomBudget { atoms: usize, budget: usize },

    /// A requested mode count splits a continuum eigenvalue cluster.
    #[error("eigenvalue cluster {cluster_start}..={cluster_end} (lambda ~ {lambda:.6}) is split: {reason}")]
    ClusterSplit {
        cluster_start: usize,
        cluster_end: usize,
        lambda: f64,
        reason: String,
    },

    /// The eigensolver did not reach the requested residual tolerance.
    #[error("eigensolver failed: mode {mode} residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Eigensolver {
        mode: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A numerical routine failed for reasons other than bad input.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 for validation problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::OffManifold { .. }
            | Error::InvalidArgument(_)
            | Error::DegenerateCovariance(_)
            | Error::BasisMismatch(_)
            | Error::AtomBudget { .. }
            | Error::ClusterSplit { .. }
            | Error::Io(_)
            | Error::Serde(_) => 1,
            Error::Eigensolver { .. } | Error::Numerical(_) => 2,
        }
    }
}
