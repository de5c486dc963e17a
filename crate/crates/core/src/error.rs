use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid truncation: at least one eigenmode is required")]
    InvalidTruncation,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "coefficient realization {value} on interval {interval} lies outside [{a_min}, {a_max}]"
    )]
    CoefficientOutOfBounds {
        interval: usize,
        value: f64,
        a_min: f64,
        a_max: f64,
    },

    #[error("{which} Gram matrix of mode {mode} is not positive definite")]
    IndefiniteGram { mode: usize, which: &'static str },

    #[error(
        "bilinear form block is {rows}x{cols}; the swap identity needs matched trial and test dimensions"
    )]
    NonSquare { rows: usize, cols: usize },

    #[error("noise sample carries no OU residual draws (was it coarsened?)")]
    MissingResidual,

    #[error(
        "Picard iteration did not converge on intervals {start}..{end} (contraction factors {ratios:?})"
    )]
    NonConvergence {
        start: usize,
        end: usize,
        ratios: Vec<f64>,
    },

    #[error("too few Monte Carlo paths: got {got}, need at least {min}")]
    TooFewPaths { got: usize, min: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
