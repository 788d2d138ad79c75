use lti_viab::Error;
use serde::Serialize;
use std::process::ExitCode;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_RESOURCE: u8 = 3;

/// A failed run: exit code plus the machine-readable error object.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: u8,
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            kind: "usage".into(),
            message: msg.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    /// Prints `{"error": {...}}` on standard error and returns the exit code.
    pub fn report(&self) -> ExitCode {
        let obj = serde_json::json!({ "error": self, "exit_code": self.code });
        eprintln!("{obj}");
        ExitCode::from(self.code)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Json(_) | Error::Io(_) => EXIT_USAGE,
            Error::ResourceCap { .. } => EXIT_RESOURCE,
            _ => EXIT_NUMERICAL,
        };
        let details = match &e {
            Error::Divergence { trace, .. } | Error::NonConvergence { trace, .. } => {
                Some(serde_json::json!({ "iterate_steps": trace }))
            }
            Error::Infeasible { lhs, rhs, .. } => {
                Some(serde_json::json!({ "lhs": lhs, "rhs": rhs }))
            }
            Error::ResourceCap { needed, cap } => {
                Some(serde_json::json!({ "needed": needed.to_string(), "cap": cap.to_string() }))
            }
            _ => None,
        };
        Failure {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
            details,
        }
    }
}
