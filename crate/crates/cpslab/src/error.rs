//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by generators, skeleton construction and measure solves.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or malformed input data.
    #[error("config error: {0}")]
    Config(String),

    /// Vector dimension mismatch or empty vector.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Grid or node index out of range.
    #[error("index error: {0}")]
    Index(String),

    /// Numerical breakdown (e.g. covariance factorization lost positive
    /// definiteness after rounding).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A quantity violated an invariant that the construction guarantees;
    /// indicates corrupted input rather than a hypothesis failure.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// A one-step martingale solve is infeasible: zero is not in the relative
    /// interior of the convex hull of the increment atoms. Carries the
    /// separating functional as the certificate.
    #[error("infeasible node solve at skeleton node {node_id}: zero escapes the increment support (separation margin {margin:.3e})")]
    Infeasible {
        node_id: usize,
        certificate: Vec<f64>,
        margin: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
