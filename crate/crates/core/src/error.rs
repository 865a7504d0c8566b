use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    /// `path` is the dotted field path inside the scenario (empty when not applicable).
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("normalization error: norm {norm} deviates from 1 by more than the accepted tolerance")]
    Normalization { norm: f64 },

    #[error("OAM mode {ell} falls outside the declared mode set")]
    ModeOverflow { ell: i32 },

    #[error("state is not spin-orbit antialigned at ell = {ell}")]
    NotAntialigned { ell: i32 },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("unknown OAM mode {0}")]
    UnknownMode(i32),

    #[error("visibility undefined: no detected events")]
    UndefinedVisibility,

    #[error("degenerate decoy intensities: {0}")]
    DegenerateDecoy(String),

    #[error("single-photon error rate undefined: X-basis single-photon yield is zero")]
    UndefinedErrorRate,

    #[error("no pulses recorded for {0}")]
    MissingKey(String),

    #[error("simulation invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
