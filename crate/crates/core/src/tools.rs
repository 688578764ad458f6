//! Audio-enhancement tool registry and invocation.
//!
//! Tools are external audio-to-audio services addressed by
//! `<tool:NAME>` tokens. The harness never touches audio bytes: the
//! contract is an audio reference in, a new audio reference out. The
//! passthrough mock derives the new reference deterministically
//! (`s1.wav` becomes `s1.bnr.wav`) so re-perception is testable without
//! any DSP service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionToken, ToolName};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("tool {tool_name}: request timed out")]
    ToolTimeout { tool_name: String },
    #[error("tool {tool_name}: {message}")]
    ToolFailure { tool_name: String, message: String },
    #[error("tool {0:?} is not registered")]
    UnknownTool(String),
    #[error("tool {0:?} is already registered")]
    DuplicateTool(String),
}

/// Where a tool's enhancement runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ToolEndpoint {
    /// POST `{audio_ref}` to the endpoint, receive `{audio_ref}`.
    Http { endpoint_url: String },
    /// Deterministic mock: tags the reference with the tool name.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    /// Filled from the registry/config key when omitted.
    #[serde(default)]
    pub tool_name: String,
    #[serde(flatten)]
    pub endpoint: ToolEndpoint,
    #[serde(default = "default_tool_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub description: String,
}

fn default_tool_timeout() -> u64 {
    10_000
}

impl ToolSpec {
    pub fn passthrough(tool_name: &str, description: &str) -> Self {
        ToolSpec {
            tool_name: tool_name.to_string(),
            endpoint: ToolEndpoint::Passthrough,
            timeout_ms: default_tool_timeout(),
            description: description.to_string(),
        }
    }

    /// The `<tool:NAME>` token this spec answers to.
    pub fn token(&self) -> Result<ActionToken, ToolError> {
        ActionToken::tool(&self.tool_name)
            .map_err(|_| ToolError::ToolFailure {
                tool_name: self.tool_name.clone(),
                message: "tool name does not form a valid token".to_string(),
            })
    }
}

#[derive(Serialize)]
struct ToolWireRequest<'a> {
    audio_ref: &'a str,
}

#[derive(Deserialize)]
struct ToolWireResponse {
    audio_ref: String,
}

/// Run the enhancement, returning the new audio reference. The original
/// reference is never mutated; callers keep both.
pub fn apply_tool(tool: &ToolSpec, audio_ref: &str) -> Result<String, ToolError> {
    match &tool.endpoint {
        ToolEndpoint::Passthrough => Ok(tagged_ref(audio_ref, &tool.tool_name)),
        ToolEndpoint::Http { endpoint_url } => {
            let client = reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_millis(tool.timeout_ms))
                .build()
                .map_err(|e| ToolError::ToolFailure {
                    tool_name: tool.tool_name.clone(),
                    message: e.to_string(),
                })?;
            let response = client
                .post(endpoint_url)
                .json(&ToolWireRequest { audio_ref })
                .send()
                .map_err(|e| {
                    if e.is_timeout() {
                        ToolError::ToolTimeout {
                            tool_name: tool.tool_name.clone(),
                        }
                    } else {
                        ToolError::ToolFailure {
                            tool_name: tool.tool_name.clone(),
                            message: e.to_string(),
                        }
                    }
                })?;
            if !response.status().is_success() {
                return Err(ToolError::ToolFailure {
                    tool_name: tool.tool_name.clone(),
                    message: format!("HTTP status {}", response.status().as_u16()),
                });
            }
            response
                .json::<ToolWireResponse>()
                .map(|r| r.audio_ref)
                .map_err(|e| ToolError::ToolFailure {
                    tool_name: tool.tool_name.clone(),
                    message: e.to_string(),
                })
        }
    }
}

/// Insert the tool tag before the file extension: `s1.wav` with tool
/// `bnr` becomes `s1.bnr.wav`; extension-less refs get a suffix.
fn tagged_ref(audio_ref: &str, tool_name: &str) -> String {
    match audio_ref.rfind('.') {
        Some(dot) if dot > 0 && !audio_ref[dot + 1..].contains('/') => {
            format!("{}.{}.{}", &audio_ref[..dot], tool_name, &audio_ref[dot + 1..])
        }
        _ => format!("{audio_ref}.{tool_name}"),
    }
}

/// Read-only after startup; duplicate names are rejected at build time.
#[derive(Debug, Default, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), ToolError> {
        // Reject names that cannot round-trip through the token parser.
        ToolName::new(&spec.tool_name)
            .map_err(|_| ToolError::UnknownTool(spec.tool_name.clone()))?;
        if self.tools.contains_key(&spec.tool_name) {
            return Err(ToolError::DuplicateTool(spec.tool_name.clone()));
        }
        self.tools.insert(spec.tool_name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &ToolName) -> Result<&ToolSpec, ToolError> {
        self.tools
            .get(name.as_str())
            .ok_or_else(|| ToolError::UnknownTool(name.as_str().to_string()))
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_tags_before_extension() {
        let tool = ToolSpec::passthrough("bnr", "noise removal");
        assert_eq!(apply_tool(&tool, "s1.wav").unwrap(), "s1.bnr.wav");
        assert_eq!(apply_tool(&tool, "audio/s1.wav").unwrap(), "audio/s1.bnr.wav");
        assert_eq!(apply_tool(&tool, "noextension").unwrap(), "noextension.bnr");
    }

    #[test]
    fn tool_token_round_trips() {
        let tool = ToolSpec::passthrough("studio", "voice restoration");
        let token = tool.token().unwrap();
        assert_eq!(token.render(), "<tool:studio>");
        assert_eq!(ActionToken::parse("<tool:studio>").unwrap(), token);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut registry = ToolRegistry::new();
        registry.register(ToolSpec::passthrough("bnr", "")).unwrap();
        assert_eq!(
            registry.register(ToolSpec::passthrough("bnr", "")).unwrap_err(),
            ToolError::DuplicateTool("bnr".to_string())
        );
    }

    #[test]
    fn unknown_tool_lookup_fails() {
        let registry = ToolRegistry::new();
        let name = ToolName::new("ghost").unwrap();
        assert_eq!(
            registry.get(&name).unwrap_err(),
            ToolError::UnknownTool("ghost".to_string())
        );
    }
}
