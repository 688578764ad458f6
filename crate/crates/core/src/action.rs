//! Action tokens: the control vocabulary emitted ahead of every final
//! output. The canonical surface forms are `<internal>`, `<external>`,
//! `<rewrite>`, and `<tool:NAME>`; parsing and rendering round-trip.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("text does not start with an action token: {0:?}")]
    NoActionToken(String),
    #[error("malformed or unknown tool token: {0:?}")]
    UnknownTool(String),
}

/// Validated tool identifier: nonempty ASCII alphanumerics, `_` or `-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToolName(String);

impl ToolName {
    pub fn new(name: &str) -> Result<Self, TokenError> {
        let ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if ok {
            Ok(ToolName(name.to_string()))
        } else {
            Err(TokenError::UnknownTool(format!("<tool:{name}>")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The decision emitted before the final output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionToken {
    /// Trust the first-pass output.
    Internal,
    /// Defer to the external system's output.
    External,
    /// Generate a fresh answer from all available evidence.
    Rewrite,
    /// Invoke an audio-enhancement tool, then re-perceive.
    Tool(ToolName),
}

impl ActionToken {
    pub fn tool(name: &str) -> Result<Self, TokenError> {
        Ok(ActionToken::Tool(ToolName::new(name)?))
    }

    /// Canonical surface form, e.g. `<internal>` or `<tool:bnr>`.
    pub fn render(&self) -> String {
        match self {
            ActionToken::Internal => "<internal>".to_string(),
            ActionToken::External => "<external>".to_string(),
            ActionToken::Rewrite => "<rewrite>".to_string(),
            ActionToken::Tool(name) => format!("<tool:{name}>"),
        }
    }

    /// Parse an exact canonical surface form.
    pub fn parse(s: &str) -> Result<Self, TokenError> {
        match s {
            "<internal>" => Ok(ActionToken::Internal),
            "<external>" => Ok(ActionToken::External),
            "<rewrite>" => Ok(ActionToken::Rewrite),
            _ => {
                if let Some(name) = s.strip_prefix("<tool:").and_then(|r| r.strip_suffix('>')) {
                    ActionToken::tool(name)
                } else {
                    Err(TokenError::NoActionToken(s.to_string()))
                }
            }
        }
    }

    /// True for the three tokens that may appear as oracle labels or
    /// fixed/fallback policies; tool tokens arise only at inference.
    pub fn is_core(&self) -> bool {
        !matches!(self, ActionToken::Tool(_))
    }

    /// The three core tokens in canonical report order.
    pub fn core_tokens() -> [ActionToken; 3] {
        [
            ActionToken::Internal,
            ActionToken::External,
            ActionToken::Rewrite,
        ]
    }
}

impl fmt::Display for ActionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for ActionToken {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionToken::parse(s)
    }
}

impl Serialize for ActionToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for ActionToken {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ActionToken::parse(&s).map_err(D::Error::custom)
    }
}
