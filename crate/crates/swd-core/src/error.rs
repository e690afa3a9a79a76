//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Failure cases surfaced by tensor, transport, model, and training ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    Shape(String),
    /// An index (class label, permutation entry, node handle) is invalid.
    Index(String),
    /// A NaN or infinity appeared where a finite value is required.
    NonFinite(String),
    /// An argument violates a documented precondition.
    Argument(String),
    /// Input exceeds a documented size limit (e.g. the factorial EMD oracle).
    TooLarge(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Index(msg) => write!(f, "index error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::TooLarge(msg) => write!(f, "input too large: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
