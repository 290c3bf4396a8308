use thiserror::Error;

use ylab_core::Error as CoreError;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failures grouped by the process exit status they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Audit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Audit(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::Config(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_)
            | CoreError::Parameter(_)
            | CoreError::Stencil(_)
            | CoreError::Shape(_)
            | CoreError::Support
            | CoreError::Decay(_)
            | CoreError::SingularNode { .. }
            | CoreError::Hypothesis(_)
            | CoreError::Io(_) => Self::Config(msg),
            CoreError::Schema(_) => Self::Audit(msg),
            CoreError::Positivity { .. }
            | CoreError::NonFinite(_)
            | CoreError::Convergence(_)
            | CoreError::NonPositiveYamabe { .. }
            | CoreError::FlowSingularity { .. }
            | CoreError::MassUndefined(_)
            | CoreError::UndefinedFit(_)
            | CoreError::FitDomain(_) => Self::Numerical(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Config(format!("json: {e}"))
    }
}
