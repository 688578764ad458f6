//! First-pass hypotheses gathered for one sample: the agent's own output,
//! the external system's candidates, and optionally a precomputed
//! rewrite candidate.

use serde::{Deserialize, Serialize};

/// One generated candidate plus where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl Hypothesis {
    pub fn bare(text: impl Into<String>) -> Self {
        Hypothesis {
            text: text.into(),
            backend_id: None,
            seed: None,
            temperature: None,
        }
    }
}

/// All candidates available for one sample.
///
/// `external_nbest` is ordered; index 0 is the designated top-1. The
/// rewrite candidate is present in labeling mode and absent at plain
/// inference, where rewrites are generated on demand. A failed first-pass
/// decode leaves the corresponding slot `None` with the error recorded,
/// so degraded routing stays possible as long as one source survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub internal: Option<Hypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal_error: Option<String>,
    pub external_nbest: Vec<Hypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ger: Option<Hypothesis>,
}

impl HypothesisSet {
    pub fn new(internal: Hypothesis, external_nbest: Vec<Hypothesis>) -> Self {
        HypothesisSet {
            internal: Some(internal),
            internal_error: None,
            external_nbest,
            external_error: None,
            ger: None,
        }
    }

    pub fn with_ger(mut self, ger: Hypothesis) -> Self {
        self.ger = Some(ger);
        self
    }

    pub fn external_top1(&self) -> Option<&Hypothesis> {
        self.external_nbest.first()
    }

    pub fn internal_text(&self) -> Option<&str> {
        self.internal.as_ref().map(|h| h.text.as_str())
    }

    /// True when at least one routable source exists.
    pub fn routable(&self) -> bool {
        self.internal.is_some() || !self.external_nbest.is_empty()
    }
}
