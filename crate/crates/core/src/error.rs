use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sphere sampling mismatch: {0}")]
    SphereMismatch(String),
    #[error("sphere level {0} exceeds the supported maximum of 5")]
    LevelTooLarge(u32),
    #[error("point {index} has no antipode in the sampling")]
    NoAntipode { index: usize },
    #[error("time step {dt} exceeds the stability bound {dt_max}")]
    Unstable { dt: f64, dt_max: f64 },
    #[error("fiber {fiber} has fewer than two distinct points")]
    DegenerateFiber { fiber: usize },
    #[error("empty tractogram")]
    EmptyTractogram,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed binary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
