//! Library side of the `agz` command: configuration resolution, plotting
//! and the error type that maps onto process exit codes.

pub mod config;
pub mod plot;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input schema: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while doing the work: exit code 1.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] agz_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(agz_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(agz_core::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(agz_core::Error::Checkpoint("x".into())).exit_code(), 1);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
    }
}
