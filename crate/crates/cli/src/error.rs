use emargin_core::eval::EvalError;
use emargin_core::signal::SignalError;
use emargin_core::train::TrainError;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// Unreadable or malformed input data.
    Data = 1,
    /// Bad configuration or command-line usage.
    Usage = 2,
    /// Non-finite values during training or evaluation.
    Numeric = 3,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Numeric, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let kind = match e {
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient(_) => ExitKind::Numeric,
            TrainError::Config(_) | TrainError::Encoder(_) | TrainError::Loss(_) => ExitKind::Usage,
            _ => ExitKind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let kind = match e {
            EvalError::Config(_) | EvalError::Encoder(_) => ExitKind::Usage,
            EvalError::Numeric(_) => ExitKind::Numeric,
            _ => ExitKind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}
