use otp_core::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Checkpoint(_) | CliError::Input(_) => EXIT_INVALID,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Io(_) => EXIT_FAILURE,
            CliError::Core(e) => match e {
                Error::Shape(_) | Error::LayerDim { .. } | Error::Config(_) | Error::Contract(_) | Error::Unsupported(_) => {
                    EXIT_INVALID
                }
                Error::Diverged { .. } | Error::NonFinite(_) => EXIT_DIVERGED,
                _ => EXIT_FAILURE,
            },
        }
    }
}
