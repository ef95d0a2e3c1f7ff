use std::fmt;
use std::process::ExitCode;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation,
    Runtime,
    Io,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Validation => 1,
            ExitKind::Runtime => 2,
            ExitKind::Io => 3,
        }
    }

    fn of(e: &probekit::Error) -> Self {
        use probekit::Error as E;
        match e {
            E::Io { .. } => ExitKind::Io,
            E::Format { .. } | E::Parse { .. } | E::Invalid(_) | E::Shape(_) | E::Config(_) => ExitKind::Validation,
            E::NonFinite(_) | E::Degenerate(_) | E::NoMaskedFrames | E::Diverged { .. } => ExitKind::Runtime,
        }
    }
}

impl From<ExitKind> for ExitCode {
    fn from(k: ExitKind) -> Self {
        ExitCode::from(k.code())
    }
}

/// A failure with the stage it happened in.
#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage: stage.into(),
            message: message.into(),
        }
    }

    pub fn validation(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(ExitKind::Validation, stage, message)
    }

    pub fn runtime(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(ExitKind::Runtime, stage, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

/// Attach a stage name to a library result.
pub trait Stage<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T> Stage<T> for probekit::Result<T> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::new(ExitKind::of(&e), stage, e.to_string()))
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::new(ExitKind::Io, stage, e.to_string()))
    }
}
