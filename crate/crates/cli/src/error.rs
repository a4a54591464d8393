use std::fmt;

use omnivln::chat::ChatError;
use omnivln::navsim::SuiteError;
use omnivln::pipeline::PipelineError;
use omnivln::reasoning::BackendError;
use omnivln::registry::RegistryError;
use omnivln::scenegen::SceneError;
use omnivln::topology::VerifierError;
use omnivln::view::ViewError;
use serde::Serialize;

/// Failure class; the discriminant is the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Config = 2,
    Data = 3,
    Backend = 4,
    Contract = 5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
    pub fn config(m: impl Into<String>) -> Self {
        Self::new(Kind::Config, m)
    }
    pub fn data(m: impl Into<String>) -> Self {
        Self::new(Kind::Data, m)
    }
    pub fn backend(m: impl Into<String>) -> Self {
        Self::new(Kind::Backend, m)
    }
    pub fn contract(m: impl Into<String>) -> Self {
        Self::new(Kind::Contract, m)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    /// One-line JSON diagnostic for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "code": self.exit_code(), "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::UnknownDataset(_) => Failure::config(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::contract(e.to_string())
    }
}

impl From<ViewError> for Failure {
    fn from(e: ViewError) -> Self {
        Failure::contract(e.to_string())
    }
}

impl From<RegistryError> for Failure {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Build { .. } => Failure::backend(e.to_string()),
            _ => Failure::config(e.to_string()),
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::backend(e.to_string())
    }
}

impl From<ChatError> for Failure {
    fn from(e: ChatError) -> Self {
        Failure::backend(e.to_string())
    }
}

impl From<VerifierError> for Failure {
    fn from(e: VerifierError) -> Self {
        Failure::backend(e.to_string())
    }
}

impl From<SuiteError> for Failure {
    fn from(e: SuiteError) -> Self {
        match e {
            SuiteError::Registry(r) => r.into(),
            SuiteError::Build { .. } => Failure::contract(e.to_string()),
            SuiteError::Pool(_) => Failure::config(e.to_string()),
            SuiteError::Csv(_) => Failure::data(e.to_string()),
        }
    }
}
