//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed Newick input; `position` is a byte offset into the text.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// A genealogy that violates a structural invariant (lineage count,
    /// time ordering, non-binary node, ...).
    #[error("invalid genealogy: {0}")]
    InvalidGenealogy(String),

    /// Bad argument to an operation (length mismatch, M < 2, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Parameter outside its mathematical domain (nonpositive scale, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Event time outside the grid.
    #[error("range error: {0}")]
    Range(String),

    /// Iterative procedure failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Non-finite values or other numerical breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
