use thiserror::Error;

use crate::gad::GadState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset is empty")]
    EmptyDataset,

    /// Gram matrix could not be factorised even with the largest jitter.
    /// Carries the index pairs of the closest training locations.
    #[error("ill-conditioned data: near-duplicate locations {pairs:?}")]
    IllConditioned { pairs: Vec<(usize, usize)> },

    /// A GAD update produced a non-finite state. `state` is the last
    /// finite state and `trajectory` the prefix leading up to it.
    #[error("dynamics diverged after step {}", .state.step)]
    Divergence {
        state: Box<GadState>,
        trajectory: Vec<GadState>,
    },

    #[error("surrogate unusable: {0}")]
    SurrogateUnusable(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
