use decaylab_core::{Error, ErrorKind};
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// The config file is missing or not JSON.
    Parse(String),
    Validation { field: String, message: String },
    /// A configured cost cap rules the experiment out before it starts.
    CostCap { field: String, message: String },
    Io(String),
    Core(Error),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> CliError {
        CliError::Validation { field: field.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation { .. } => 2,
            CliError::CostCap { .. } => 3,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::CostCap => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        let (kind, field, message) = match self {
            CliError::Parse(m) => ("ParseError".to_string(), None, m.clone()),
            CliError::Validation { field, message } => ("ValidationError".to_string(), Some(field.clone()), message.clone()),
            CliError::CostCap { field, message } => ("CostCapExceeded".to_string(), Some(field.clone()), message.clone()),
            CliError::Io(m) => ("IoError".to_string(), None, m.clone()),
            CliError::Core(e) => (e.name().to_string(), None, e.to_string()),
        };
        json!({ "status": "error", "error": kind, "field": field, "message": message, "exit_code": self.exit_code() })
            .to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) | CliError::Io(m) => f.write_str(m),
            CliError::Validation { field, message } | CliError::CostCap { field, message } => write!(f, "{field}: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
