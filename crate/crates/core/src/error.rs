use thiserror::Error;

/// Errors raised by the simulation, detection and scenario layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain where a model is defined.
    #[error("parameter domain error: {0}")]
    Domain(String),

    /// A scenario or model configuration is inconsistent.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// An iterative method failed to converge.
    #[error("{method} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// A physical state violated positivity (pressure, density, temperature).
    #[error("infeasible state at node {node} (x = {position:.1} m): {message}")]
    Infeasible {
        node: usize,
        position: f64,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
