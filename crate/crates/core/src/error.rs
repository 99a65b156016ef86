//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A vector or tensor has the wrong length for the operation.
    DimensionMismatch { expected: usize, got: usize },
    /// A batch, dataset, trigger set, or update map was empty.
    Empty(&'static str),
    /// A numeric argument is outside its documented range.
    OutOfRange(&'static str),
    /// A model spec or protocol config violates an invariant.
    InvalidConfig(String),
    /// Image dimensions too small to place a trigger patch.
    ShapeTooSmall { height: usize, width: usize },
    /// The requested partition cannot be satisfied.
    Infeasible(String),
    /// A computation produced a non-finite intermediate (numerical blowup).
    NonFinite(&'static str),
    /// Round records are inconsistent (missing or ragged per-client data).
    RaggedLog,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::Empty(what) => write!(f, "{what} is empty"),
            Error::OutOfRange(what) => write!(f, "{what} is out of range"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::ShapeTooSmall { height, width } => {
                write!(f, "image shape {height}x{width} too small for a trigger patch")
            }
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::RaggedLog => write!(f, "round records are ragged or incomplete"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
