use crossnet::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] crossnet::Error),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing run artifacts:\n  {}", .0.join("\n  "))]
    MissingArtifacts(Vec<String>),

    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    /// 2 for configuration and usage errors, 3 for data and I/O errors, 4
    /// for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            },
            CliError::Usage(_) => 2,
            CliError::MissingArtifacts(_) => 3,
            CliError::GradCheck(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn config_error(msg: impl std::fmt::Display) -> CliError {
    CliError::Core(crossnet::Error::Config(msg.to_string()))
}

pub(crate) fn data_error(msg: impl std::fmt::Display) -> CliError {
    CliError::Core(crossnet::Error::Data(msg.to_string()))
}

pub(crate) fn io_error(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Core(crossnet::Error::Io {
        path: path.display().to_string(),
        source,
    })
}
