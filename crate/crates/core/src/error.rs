use std::path::PathBuf;

use crate::spectral::SpectralField;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("noise intensity vanishes at wavenumber {wavenumber}; Q_beta is not invertible")]
    SingularIntensity { wavenumber: usize },

    #[error("mode count mismatch: {left} vs {right}")]
    ModeMismatch { left: usize, right: usize },

    #[error("Picard iteration failed to contract on the horizon (measured factor {factor:.4})")]
    HorizonTooLarge { factor: f64 },

    #[error("solution blew up at t = {time}")]
    BlowUp {
        time: f64,
        last_finite: Box<SpectralField>,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
