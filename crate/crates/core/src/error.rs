use thiserror::Error;

/// Errors raised by the solvers, the analysis routines and scenario ingestion.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: denominator {value:e} at mode {mode}")]
    NotPositiveDefinite { mode: usize, value: f64 },

    #[error("singular matrix encountered at pivot {0}")]
    Singular(usize),

    #[error("Laplace variable must satisfy Re(s) > 0, got {re} + {im}i")]
    InvalidLaplaceVariable { re: f64, im: f64 },

    #[error("non-finite material evaluation in element {element}")]
    NonFinite { element: usize },

    #[error("Newton solver did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("negative water height {height:e} in cell {cell}")]
    NegativeDepth { cell: usize, height: f64 },

    #[error("coupling iteration diverged in step {step} after {} iterations", residuals.len())]
    Diverged { step: usize, residuals: Vec<f64> },

    #[error("step {step}, iteration {iteration}: {source}")]
    InStep {
        step: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Strips step/iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStep { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), Error::Diverged { .. })
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::InvalidParameter(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
