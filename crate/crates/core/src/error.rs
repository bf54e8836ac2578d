//! Error type shared by every module.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes do not line up for `op`; both shapes are reported.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    /// Vector lengths do not line up for `op`.
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    /// Pooling window exceeds the input extent.
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
    /// A bounding box with non-positive area where a real one is required.
    DegenerateBox { width: f64, height: f64 },
    /// A patch side that matches neither configured branch input size.
    UnknownInputSize { got: usize, roi: usize, target: usize },
    /// A value that must be finite is not; `what` names the offender
    /// (for gradients, the parameter name).
    NonFinite { what: String },
    /// Configuration that cannot be realized.
    InvalidConfig(String),
    /// A scenario that cannot be rendered.
    InvalidScenario(String),
    /// An operation that needs at least one element got none.
    EmptyInput(&'static str),
    /// Training aborted because the loss exceeded the divergence bound.
    /// Carries the loss trace up to the aborting iteration.
    TrainingDiverged {
        iteration: usize,
        loss: f64,
        trace: Vec<f64>,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: shape mismatch, {}x{}x{} vs {}x{}x{}",
                left.0, left.1, left.2, right.0, right.1, right.2
            ),
            Error::LengthMismatch { op, left, right } => {
                write!(f, "{op}: length mismatch, {left} vs {right}")
            }
            Error::WindowTooLarge {
                window,
                height,
                width,
            } => write!(
                f,
                "pooling window {window} larger than input {height}x{width}"
            ),
            Error::DegenerateBox { width, height } => {
                write!(f, "degenerate bounding box {width}x{height}")
            }
            Error::UnknownInputSize { got, roi, target } => write!(
                f,
                "patch side {got} matches neither the search input ({roi}) nor the target input ({target})"
            ),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            Error::EmptyInput(what) => write!(f, "{what}: empty input"),
            Error::TrainingDiverged {
                iteration, loss, ..
            } => write!(f, "training diverged at iteration {iteration}: loss {loss}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
