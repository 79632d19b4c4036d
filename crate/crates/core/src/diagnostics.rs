use serde::{Deserialize, Serialize};

/// A non-fatal note about an input that was skipped or degraded.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(stage: &str, key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { stage: stage.to_string(), key: key.into(), message: message.into() }
    }
}
