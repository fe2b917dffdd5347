use thiserror::Error;

/// Failures mapped onto exit codes: 2 for usage or configuration, 1 for
/// everything that goes wrong while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Runtime(#[from] meldkit::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(meldkit::Error::Unknown { .. } | meldkit::Error::Unsupported(_)) => 2,
            _ => 1,
        }
    }

    /// A library error raised while checking settings.
    pub fn from_config(e: meldkit::Error) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}
