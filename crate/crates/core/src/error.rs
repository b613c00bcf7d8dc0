use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("population is not supercritical: b * E[V] = {0} <= 1")]
    NotSupercritical(f64),

    #[error("root bracket for the Malthusian parameter not found (last probe x = {0})")]
    BracketNotFound(f64),

    #[error("Laplace inversion did not converge at t = {t} (spread {spread:e})")]
    InversionDiverged { t: f64, spread: f64 },

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn hypothesis(msg: impl Into<String>) -> Self {
        Error::Hypothesis(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
