use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an argument outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Evaluation hit a pole of a susceptibility.
    #[error("singular susceptibility at omega = {omega} rad/s")]
    Singularity { omega: f64 },

    /// Input arrays or traces do not line up (length, rate, grid).
    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    /// The requested spectral model is not a valid power spectral density.
    #[error("unphysical model: {0}")]
    Unphysical(String),

    /// A frequency grid is too sparse or too narrow for the requested
    /// operation.
    #[error("grid resolution: {0}")]
    Resolution(String),

    /// The closed-loop simulation diverged.
    #[error("simulation diverged at t = {t_onset} s")]
    Divergence { t_onset: f64 },

    /// An iterative fit failed to converge.
    #[error("fit did not converge: {0}")]
    Nonconvergence(String),

    /// A reference signal is too weak to define a phase.
    #[error("low SNR: {0}")]
    LowSnr(String),

    /// Configuration file problem.
    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse: {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
