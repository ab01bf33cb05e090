use std::path::PathBuf;

/// Failures surfaced by the commands, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: pcdiff_core::Error,
    },
    #[error("loss became non-finite ({loss}) at step {step}")]
    NonFiniteLoss { step: u64, loss: f32 },
    #[error("gradient check failed: worst parameter `{param}` (relative error {error:.3e} > {tolerance:.1e})")]
    Gradcheck { param: String, error: f64, tolerance: f64 },
    #[error(transparent)]
    Core(#[from] pcdiff_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::NonFiniteLoss { .. } => 4,
            CliError::Gradcheck { .. } => 5,
            CliError::Core(pcdiff_core::Error::Io(_)) => 3,
            CliError::Core(pcdiff_core::Error::Format { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// Attaches the offending path to a file-level failure.
    pub fn at(path: impl Into<PathBuf>) -> impl FnOnce(pcdiff_core::Error) -> CliError {
        let path = path.into();
        move |source| match source {
            e @ (pcdiff_core::Error::Io(_) | pcdiff_core::Error::Format { .. } | pcdiff_core::Error::Parse { .. }) => {
                CliError::Io { path, source: e }
            }
            e => CliError::Core(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
