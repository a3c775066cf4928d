use std::fmt;

/// Harness failure, carrying the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// Missing or malformed data files (exit 3).
    Data(String),
    /// Training or evaluation produced an unusable number (exit 4).
    Numerical(String),
    /// Gradient check exceeded its tolerance (exit 5).
    Gradcheck(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Gradcheck(_) => 5,
        }
    }

    /// The more severe of two errors, by exit code.
    pub fn worst(a: Option<CliError>, b: CliError) -> CliError {
        match a {
            Some(a) if a.exit_code() >= b.exit_code() => a,
            _ => b,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical abort: {m}"),
            CliError::Gradcheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crossnet::Error> for CliError {
    fn from(e: crossnet::Error) -> Self {
        use crossnet::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::InvalidSplit(_) => CliError::Config(msg),
            E::NotFound { .. } | E::Format { .. } | E::Io { .. } => CliError::Data(msg),
            E::InsufficientSample { .. }
            | E::DegenerateMatrix { .. }
            | E::NonFinite(_)
            | E::UndefinedCell(_) => CliError::Numerical(msg),
        }
    }
}
