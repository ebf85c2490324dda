use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] adamore::Error),
}

impl CliError {
    /// 1 for anything the user can fix by changing inputs, 2 for failures
    /// during the run itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                adamore::Error::Config(_)
                | adamore::Error::Invalid(_)
                | adamore::Error::Parse { .. }
                | adamore::Error::Shape { .. } => 1,
                adamore::Error::Io { .. }
                | adamore::Error::NonFinite { .. }
                | adamore::Error::NotScalar(_)
                | adamore::Error::Diverged { .. } => 2,
            },
        }
    }
}
