use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("image is {width}x{height}, need at least {min}x{min}")]
    Dimension { width: usize, height: usize, min: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("detector found no usable pixels ({0})")]
    Detector(&'static str),

    #[error("selection needs {needed} valid pixels, map has {available}")]
    Selection { needed: usize, available: usize },

    #[error("illuminant estimation failed: {0}")]
    Estimation(String),

    #[error("shape mismatch: {0}")]
    Structural(String),

    #[error("loss undefined: {0}")]
    Loss(&'static str),

    #[error("usage error: {0}")]
    Usage(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Training { step: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    Metric(&'static str),

    #[error("statistics undefined: {0}")]
    Stats(&'static str),

    #[error("cannot split {n} entries into {k} folds")]
    Split { n: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad numbers rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Training { .. }
                | Error::Estimation(_)
                | Error::Detector(_)
                | Error::Selection { .. }
                | Error::Loss(_)
                | Error::Metric(_)
                | Error::Stats(_)
        )
    }
}
