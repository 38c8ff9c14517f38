use shrinking_gaps::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    /// A smallness condition refused in strict mode; the payload is the
    /// report echoed to stdout.
    #[error("{message}")]
    Refused { message: String, report: serde_json::Value },
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_BOUND: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for a library error.
pub fn core_code(e: &CoreError) -> i32 {
    use CoreError::*;
    match e {
        PipelineStep { source, .. } => core_code(source),
        SmallnessViolated { .. } | GapConditionViolated { .. } => EXIT_BOUND,
        InvalidAlpha(..)
        | InvalidBasis(..)
        | InadmissibleParams { .. }
        | InfiniteOnNonDiagonal
        | DimensionMismatch(..)
        | PositivityViolated { .. }
        | BoundVacuous { .. }
        | InvalidArgument(..) => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    }
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Refused { .. } => EXIT_BOUND,
            CliError::Core { source, .. } => core_code(source),
            CliError::Io { .. } => EXIT_NUMERICAL,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

/// Attaches a short context string to library errors.
pub trait Context<T> {
    fn ctx(self, context: &str) -> CliResult<T>;
}

impl<T> Context<T> for shrinking_gaps::Result<T> {
    fn ctx(self, context: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: context.to_string(), source })
    }
}
