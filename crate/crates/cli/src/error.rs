use thiserror::Error;

/// Failures surfaced by the command-line driver.
#[derive(Debug, Error)]
pub enum CliError {
    /// A required config entry is absent; displays as `<path> required`.
    #[error("{0} required")]
    Missing(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] srdf_kit::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Module-qualified error code.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Missing(_) => "config.missing",
            CliError::Config(_) => "config.invalid",
            CliError::Io { .. } => "io.failed",
            CliError::Core(e) => e.code(),
        }
    }

    /// 3 for numerical failures, 2 for everything the user can fix in the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
