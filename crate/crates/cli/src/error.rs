use perception_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or input files.
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for input errors, 3 for compatibility errors, 4 for numeric or
    /// training failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::Validation(_) => 2,
                CoreError::Compatibility(_) => 3,
                CoreError::Numeric(_) | CoreError::Training { .. } | CoreError::UndefinedCorrelation(_) => 4,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "input",
            3 => "compatibility",
            _ => "numeric",
        }
    }
}
