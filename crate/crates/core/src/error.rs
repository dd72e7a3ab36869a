use thiserror::Error;

use crate::analysis::FitError;
use crate::config::{ConfigError, ValidationError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Validation(#[from] ValidationError),

    /// A chirp is undersampled somewhere along a propagation chain.
    #[error("sampling criterion violated on {planes}: spacing {spacing_um:.4} um exceeds {limit_um:.4} um")]
    Sampling {
        planes: String,
        spacing_um: f64,
        limit_um: f64,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("field has zero norm")]
    ZeroField,

    #[error("{what} = {value} lies outside the grid [{min}, {max}]")]
    OutOfGrid {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{context}: {source}")]
    Fit {
        context: String,
        #[source]
        source: FitError,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Numerical failures (discretization, fitting) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_numerical(),
            other => matches!(
                other,
                Error::Sampling { .. } | Error::Grid(_) | Error::Fit { .. } | Error::ZeroField
            ),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn fit(context: impl Into<String>, source: FitError) -> Self {
        Error::Fit {
            context: context.into(),
            source,
        }
    }
}
