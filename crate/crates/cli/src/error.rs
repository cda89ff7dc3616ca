use std::fmt;

/// A rejected configuration, with the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config field `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{cells} cells exceed the budget of {budget}")]
    Budget { cells: u64, budget: u64 },

    #[error("{failed} of {total} cells failed")]
    Partial { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] brier_align::error::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema mismatch in {file}: {reason}")]
    Schema { file: String, reason: String },
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Schema { .. } => 2,
            HarnessError::Budget { .. } => 3,
            HarnessError::Partial { .. } => 4,
            _ => 1,
        }
    }
}
