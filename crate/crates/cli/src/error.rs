use std::fmt;
use std::path::Path;

use barbot_core::config::ConfigError;
use barbot_core::corpus::CorpusError;
use barbot_core::perception::PerceptionError;
use barbot_core::plan::{CompileError, ProgramDocError, Violation};
use barbot_core::reconcile::ReconcileError;
use barbot_core::sim::ExecError;
use serde::Serialize;
use serde_json::{json, Value};

/// Error reported as one JSON object on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into(), details: None, exit_code: 1 }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn with_exit_code(mut self, code: i32) -> Self {
        self.exit_code = code;
        self
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new("io", format!("{}: {err}", path.display()))
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

fn violations(list: &[Violation]) -> CliError {
    CliError::new("invalid_program", list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n"))
        .with_details(json!({ "violations": list }))
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new("config", e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::UnknownId(_) => "unknown_recipe",
            CorpusError::DuplicateId(_) => "duplicate_recipe",
            _ => "corpus",
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<PerceptionError> for CliError {
    fn from(e: PerceptionError) -> Self {
        let err = CliError::new("detections", e.to_string());
        match &e {
            PerceptionError::SchemaViolation { path, .. } => err.with_details(json!({ "path": path })),
            _ => err,
        }
    }
}

impl From<ReconcileError> for CliError {
    fn from(e: ReconcileError) -> Self {
        CliError::new("reconcile", e.to_string())
    }
}

impl From<CompileError> for CliError {
    fn from(e: CompileError) -> Self {
        match e {
            CompileError::Invalid(list) => violations(&list),
            other => CliError::new("compile", other.to_string()),
        }
    }
}

impl From<ProgramDocError> for CliError {
    fn from(e: ProgramDocError) -> Self {
        match e {
            ProgramDocError::Invalid(list) => violations(&list),
            other => CliError::new("malformed_program", other.to_string()),
        }
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::InvalidProgram(list) => violations(&list),
            other => CliError::new("binding_mismatch", other.to_string()),
        }
    }
}
