use cavity_qed::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 configuration, 3 numerical failure, 4 convergence failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Core(CoreError::InvalidParameter(_) | CoreError::DrivenLadder(_) | CoreError::Csv(_)) => 2,
            Self::Core(CoreError::NoConvergence(_)) => 4,
            Self::Core(_) | Self::Io(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "convergence",
            _ => "numerical",
        }
    }
}
