use bhdimer::error::DimerError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(DimerError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

/// Rejected inputs count as configuration errors, everything else the
/// engine reports as numerical.
impl From<DimerError> for CliError {
    fn from(e: DimerError) -> Self {
        match e {
            DimerError::InvalidParams(_) | DimerError::InvalidInput(_) | DimerError::StepTooLarge(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Numerical(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        assert_eq!(CliError::from(DimerError::InvalidInput("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(DimerError::StepTooLarge("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(DimerError::NoConvergence(30)).exit_code(), 2);
        assert_eq!(CliError::from(DimerError::PoleSingularity(1.0)).exit_code(), 2);
        assert_eq!(CliError::Verification("x".into()).exit_code(), 3);
    }
}
