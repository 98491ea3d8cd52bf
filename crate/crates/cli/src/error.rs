use einc::einclusion::EincError;
use einc::homogenize::HomogenizeError;
use einc::spectral::SpectralError;
use einc::{GridError, ObstacleError, SolveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent configuration; `key` is the dotted path of the entry.
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("unknown format: {0}")]
    Format(String),
    #[error("{0}")]
    Ordering(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Extraction(String),
    #[error("{0}")]
    Invariant(String),
    #[error("{path}: {message}")]
    Artifact { path: String, message: String },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { key: key.into(), message: message.into() }
    }

    pub fn artifact(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Self::Artifact { path: path.as_ref().display().to_string(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } | Self::Format(_) | Self::Ordering(_) | Self::Artifact { .. } => 2,
            Self::NotConverged(_) => 3,
            Self::Extraction(_) => 4,
            Self::Invariant(_) => 5,
            Self::Io(_) => 1,
        }
    }

    pub fn from_solve(key: &str, e: SolveError) -> Self {
        match e {
            SolveError::NotConverged(_) => Self::NotConverged(format!("{key}: {e}")),
            other => Self::config(key, other.to_string()),
        }
    }

    pub fn from_einc(key: &str, e: EincError) -> Self {
        match e {
            EincError::Solve(s) => Self::from_solve("solver", s),
            EincError::Invalid(_) | EincError::Grid(_) => Self::config(key, e.to_string()),
            other => Self::Extraction(format!("{key}: {other}")),
        }
    }

    pub fn from_obstacle(key: &str, e: ObstacleError) -> Self {
        Self::config(key, e.to_string())
    }

    pub fn from_grid(key: &str, e: GridError) -> Self {
        Self::config(key, e.to_string())
    }

    pub fn from_spectral(key: &str, e: SpectralError) -> Self {
        match e {
            SpectralError::DegenerateVolume(_) => Self::Extraction(format!("{key}: {e}")),
            SpectralError::Dimension { .. } | SpectralError::Grid(_) => Self::config(key, e.to_string()),
            other => Self::NotConverged(format!("{key}: {other}")),
        }
    }

    pub fn from_homogenize(key: &str, e: HomogenizeError) -> Self {
        match e {
            HomogenizeError::OrderingViolation(_) => Self::Ordering(format!("{key}: {e}")),
            HomogenizeError::NotConverged { .. } | HomogenizeError::LimitDiverged(_) => {
                Self::NotConverged(format!("{key}: {e}"))
            }
            other => Self::config(key, other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
