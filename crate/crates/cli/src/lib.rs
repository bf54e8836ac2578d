//! File formats, image IO, and the command implementations behind the
//! `dualtrack` binary. Everything algorithmic lives in `dualtrack-core`;
//! this crate only moves bytes.

pub mod checkpoint;
pub mod csvio;
pub mod pngio;
pub mod run;
pub mod scenario;

/// Marker for user-input problems (bad paths, malformed arguments). The
/// binary exits with code 2 for these and 1 for everything else.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage_error<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(anyhow::Error::new(UsageError(msg.into())))
}
