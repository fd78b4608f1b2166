use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The vehicle state left the domain where the model equations are defined.
    #[error("invalid vehicle state: {0}")]
    InvalidState(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A parameter draw produced a physically meaningless vehicle; callers resample.
    #[error("rejected parameter sample: {0}")]
    RejectedSample(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("training diverged in round {round}, epoch {epoch}: {detail}")]
    Divergence {
        round: usize,
        epoch: usize,
        detail: String,
    },

    #[error("posterior leakage: acceptance {acceptance:.3e} after {proposals} proposals")]
    Leakage { acceptance: f64, proposals: u64 },

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::TomlDe(_) | Error::TomlSer(_) | Error::Format(_) => 2,
            Error::InvalidState(_)
            | Error::InvalidParameter(_)
            | Error::RejectedSample(_)
            | Error::Simulation(_)
            | Error::InsufficientData(_) => 3,
            Error::Divergence { .. } | Error::Leakage { .. } => 4,
            Error::LinAlg(_) => 5,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
