use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Probe detuning lies inside the guard band around an excited-state resonance.
    #[error(
        "detuning {detuning:.6e} rad/s is within {guard:.3e} rad/s of the pole at {pole:.6e} rad/s"
    )]
    Pole {
        detuning: f64,
        pole: f64,
        guard: f64,
    },

    #[error("{name} = {value} is outside its domain: {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{0}")]
    Range(String),

    #[error("time grid: {0}")]
    Grid(String),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("record dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied configuration rather than by numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Io(_) | Error::Json(_) | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
