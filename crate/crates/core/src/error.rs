use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A value that must be finite was NaN or infinite.
    NonFinite { what: &'static str },
    /// Parameter out of its documented range.
    InvalidArgument { what: &'static str },
    /// Brute-force enumeration refused: too many sign patterns.
    TooLarge { what: &'static str, limit: usize },
    /// The objective became non-finite during a solve.
    NonFiniteObjective { block: usize, step: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { op, left, right } => write!(
                f,
                "dimension mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument { what } => write!(f, "invalid argument: {what}"),
            Error::TooLarge { what, limit } => write!(f, "{what} exceeds limit {limit}"),
            Error::NonFiniteObjective { block, step } => {
                write!(f, "objective became non-finite in block {block} at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
