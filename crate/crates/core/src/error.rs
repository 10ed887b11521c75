use thiserror::Error;

/// Errors raised by problem construction, noise generation, the one-step
/// maps and the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    #[error("index window [{from}, {to}) is outside 0..={len}")]
    Index { from: usize, to: usize, len: usize },

    #[error(
        "iterated integrals for general non-commutative noise need a Lévy-area \
         approximation, which is not supported"
    )]
    UnsupportedNoise,

    #[error("implicit solver did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("not applicable: {0}")]
    Applicability(String),

    #[error("state became non-finite at step {step} (t = {time})")]
    Overflow { step: usize, time: f64 },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("step size {delta} exceeds the upper step size bound {bound}")]
    StepBound { delta: f64, bound: f64 },

    #[error("EOC undefined for pair {index}: errors must be positive")]
    UndefinedEoc { index: usize },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, constraint: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            value,
            constraint: constraint.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
