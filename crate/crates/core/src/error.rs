use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two inputs that must agree in size do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A NaN or infinity where a finite value is required; `index` is the
    /// offending row (or element) of `what`.
    NonFinite { what: &'static str, index: usize },
    /// A parameter outside its admissible range.
    InvalidParameter { name: &'static str, reason: String },
    /// A class has no samples where at least one is required.
    EmptyClass { class: usize },
    /// A class-conditional error is undefined (zero support).
    UndefinedClassError { class: usize },
    /// An iterative solver hit its iteration cap.
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// Training blew up.
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotConverged { .. } | Error::Diverged { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::NonFinite { what, index } => write!(f, "{what}: non-finite value at {index}"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
            Error::EmptyClass { class } => write!(f, "class {class} has no samples"),
            Error::UndefinedClassError { class } => {
                write!(f, "class {class} error is undefined (no support)")
            }
            Error::NotConverged {
                what,
                iterations,
                residual,
            } => write!(
                f,
                "{what} did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss:e})")
            }
        }
    }
}

impl core::error::Error for Error {}
