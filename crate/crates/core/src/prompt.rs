//! Prompt rendering, SFT target serialization, and model-output parsing.
//!
//! Templates live under `templates/` as versioned text assets; rendering
//! is deterministic, so identical inputs plus an identical template
//! version produce identical bytes. `parse_model_output` is the inverse
//! of `build_target` over single-line payloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionToken, TokenError};
use crate::dataset::Sample;
use crate::hypothesis::HypothesisSet;

const ASR_ARBITER_V1: &str = include_str!("../templates/asr_arbiter_v1.txt");
const QA_ARBITER_V1: &str = include_str!("../templates/qa_arbiter_v1.txt");
const ASR_TRANSCRIBE_V1: &str = include_str!("../templates/asr_transcribe_v1.txt");
const ASR_GER_V1: &str = include_str!("../templates/asr_ger_v1.txt");
const QA_ANSWER_V1: &str = include_str!("../templates/qa_answer_v1.txt");
const QA_REWRITE_V1: &str = include_str!("../templates/qa_rewrite_v1.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("internal hypothesis is missing")]
    MissingHypothesis,
    #[error("sample has no question/options")]
    MissingOptions,
    #[error("target text is empty")]
    EmptyTarget,
    #[error("model output has no leading action token: {0:?}")]
    NoActionToken(String),
    #[error("model output has a malformed tool token: {0:?}")]
    UnknownTool(String),
    #[error("answer text does not resolve to an option: {0:?}")]
    Unparseable(String),
    #[error("answer text matches more than one option: {0:?}")]
    Ambiguous(String),
    #[error("option set is invalid: {0}")]
    InvalidOptions(String),
}

/// One answer option: a letter label plus its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceId {
    pub letter: char,
    pub text: String,
}

impl ChoiceId {
    pub fn new(letter: char, text: impl Into<String>) -> Self {
        ChoiceId {
            letter: letter.to_ascii_uppercase(),
            text: text.into(),
        }
    }

    /// Canonical answer form, e.g. `C. Forest fire`.
    pub fn render(&self) -> String {
        format!("{}. {}", self.letter, self.text)
    }
}

/// Ordered, letter-unique option set for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChoiceId>", into = "Vec<ChoiceId>")]
pub struct OptionSet(Vec<ChoiceId>);

impl OptionSet {
    pub fn new(options: Vec<ChoiceId>) -> Result<Self, PromptError> {
        if options.is_empty() {
            return Err(PromptError::InvalidOptions("empty option set".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &options {
            if !c.letter.is_ascii_alphabetic() {
                return Err(PromptError::InvalidOptions(format!(
                    "option letter {:?} is not a letter",
                    c.letter
                )));
            }
            if !seen.insert(c.letter) {
                return Err(PromptError::InvalidOptions(format!(
                    "duplicate option letter {:?}",
                    c.letter
                )));
            }
        }
        Ok(OptionSet(options))
    }

    pub fn get(&self, letter: char) -> Option<&ChoiceId> {
        let letter = letter.to_ascii_uppercase();
        self.0.iter().find(|c| c.letter == letter)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChoiceId> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, choice: &ChoiceId) -> bool {
        self.get(choice.letter).is_some()
    }
}

impl TryFrom<Vec<ChoiceId>> for OptionSet {
    type Error = PromptError;

    fn try_from(v: Vec<ChoiceId>) -> Result<Self, Self::Error> {
        OptionSet::new(v)
    }
}

impl From<OptionSet> for Vec<ChoiceId> {
    fn from(s: OptionSet) -> Self {
        s.0
    }
}

/// One ordered piece of prompt content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "part", rename_all = "snake_case")]
pub enum PromptPart {
    AudioRef { uri: String },
    Question { text: String },
    Hypotheses { text: String },
}

/// A fully rendered prompt: system instruction plus ordered user parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub user_content: Vec<PromptPart>,
    pub template_id: String,
    pub template_version: String,
}

impl PromptBundle {
    /// Flatten to the single prompt string sent over the wire.
    pub fn render_flat(&self) -> String {
        let mut out = self.system_instruction.trim_end().to_string();
        for part in &self.user_content {
            out.push_str("\n\n");
            match part {
                PromptPart::AudioRef { uri } => {
                    out.push_str("[audio] ");
                    out.push_str(uri);
                }
                PromptPart::Question { text } | PromptPart::Hypotheses { text } => {
                    out.push_str(text);
                }
            }
        }
        out
    }
}

/// Versions of every template asset, recorded in run manifests.
pub fn template_versions() -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for id in [
        "asr_arbiter",
        "asr_ger",
        "asr_transcribe",
        "qa_answer",
        "qa_arbiter",
        "qa_rewrite",
    ] {
        map.insert(id.to_string(), "v1".to_string());
    }
    map
}

fn count_word(n: usize) -> String {
    match n {
        1 => "One".to_string(),
        2 => "Two".to_string(),
        3 => "Three".to_string(),
        4 => "Four".to_string(),
        5 => "Five".to_string(),
        6 => "Six".to_string(),
        7 => "Seven".to_string(),
        8 => "Eight".to_string(),
        9 => "Nine".to_string(),
        10 => "Ten".to_string(),
        other => other.to_string(),
    }
}

fn fill_hypothesis_count(template: &str, n: usize) -> String {
    let word = if n == 1 { "hypothesis" } else { "hypotheses" };
    template
        .replace("{EXTERNAL_COUNT}", &count_word(n))
        .replace("{HYPOTHESIS_WORD}", word)
}

fn render_asr_hypotheses(hyps: &HypothesisSet) -> Result<String, PromptError> {
    let internal = hyps.internal.as_ref().ok_or(PromptError::MissingHypothesis)?;
    if hyps.external_nbest.is_empty() {
        return Err(PromptError::MissingHypothesis);
    }
    let mut text = String::from("External hypotheses:\n");
    for (i, h) in hyps.external_nbest.iter().enumerate() {
        text.push_str(&format!("{}. {}\n", i + 1, h.text));
    }
    text.push_str(&format!("Internal first-pass transcription: {}", internal.text));
    Ok(text)
}

fn render_question(sample: &Sample) -> Result<String, PromptError> {
    let question = sample.question.as_ref().ok_or(PromptError::MissingOptions)?;
    let options = sample.options.as_ref().ok_or(PromptError::MissingOptions)?;
    let mut text = format!("Question: {question}\nOptions:");
    for option in options.iter() {
        text.push('\n');
        text.push_str(&option.render());
    }
    Ok(text)
}

/// Arbiter prompt for an ASR sample: audio, the external N-best in order,
/// the internal first pass, and the three-way action instruction.
pub fn build_asr_prompt(sample: &Sample, hyps: &HypothesisSet) -> Result<PromptBundle, PromptError> {
    let hypotheses = render_asr_hypotheses(hyps)?;
    Ok(PromptBundle {
        system_instruction: fill_hypothesis_count(ASR_ARBITER_V1, hyps.external_nbest.len()),
        user_content: vec![
            PromptPart::AudioRef {
                uri: sample.audio_ref.clone(),
            },
            PromptPart::Hypotheses { text: hypotheses },
        ],
        template_id: "asr_arbiter".to_string(),
        template_version: "v1".to_string(),
    })
}

/// Arbiter prompt for a QA sample: audio, question and options, one
/// external candidate, the internal prediction, and the action instruction.
pub fn build_qa_prompt(sample: &Sample, hyps: &HypothesisSet) -> Result<PromptBundle, PromptError> {
    let question = render_question(sample)?;
    let internal = hyps.internal.as_ref().ok_or(PromptError::MissingHypothesis)?;
    let external = hyps
        .external_top1()
        .ok_or(PromptError::MissingHypothesis)?;
    let hypotheses = format!(
        "External candidate: {}\nInternal prediction: {}",
        external.text, internal.text
    );
    Ok(PromptBundle {
        system_instruction: QA_ARBITER_V1.trim_end().to_string(),
        user_content: vec![
            PromptPart::AudioRef {
                uri: sample.audio_ref.clone(),
            },
            PromptPart::Question { text: question },
            PromptPart::Hypotheses { text: hypotheses },
        ],
        template_id: "qa_arbiter".to_string(),
        template_version: "v1".to_string(),
    })
}

/// Plain first-pass transcription instruction (no hypotheses shown).
pub fn build_transcribe_prompt(sample: &Sample) -> PromptBundle {
    PromptBundle {
        system_instruction: ASR_TRANSCRIBE_V1.trim_end().to_string(),
        user_content: vec![PromptPart::AudioRef {
            uri: sample.audio_ref.clone(),
        }],
        template_id: "asr_transcribe".to_string(),
        template_version: "v1".to_string(),
    }
}

/// Plain first-pass QA instruction.
pub fn build_qa_answer_prompt(sample: &Sample) -> Result<PromptBundle, PromptError> {
    let question = render_question(sample)?;
    Ok(PromptBundle {
        system_instruction: QA_ANSWER_V1.trim_end().to_string(),
        user_content: vec![
            PromptPart::AudioRef {
                uri: sample.audio_ref.clone(),
            },
            PromptPart::Question { text: question },
        ],
        template_id: "qa_answer".to_string(),
        template_version: "v1".to_string(),
    })
}

/// Correction prompt conditioned on the audio and all hypotheses.
pub fn build_asr_ger_prompt(sample: &Sample, hyps: &HypothesisSet) -> Result<PromptBundle, PromptError> {
    let hypotheses = render_asr_hypotheses(hyps)?;
    Ok(PromptBundle {
        system_instruction: fill_hypothesis_count(ASR_GER_V1, hyps.external_nbest.len()),
        user_content: vec![
            PromptPart::AudioRef {
                uri: sample.audio_ref.clone(),
            },
            PromptPart::Hypotheses { text: hypotheses },
        ],
        template_id: "asr_ger".to_string(),
        template_version: "v1".to_string(),
    })
}

/// Rewrite prompt for QA: audio only, no candidates.
pub fn build_qa_rewrite_prompt(sample: &Sample) -> Result<PromptBundle, PromptError> {
    let question = render_question(sample)?;
    Ok(PromptBundle {
        system_instruction: QA_REWRITE_V1.trim_end().to_string(),
        user_content: vec![
            PromptPart::AudioRef {
                uri: sample.audio_ref.clone(),
            },
            PromptPart::Question { text: question },
        ],
        template_id: "qa_rewrite".to_string(),
        template_version: "v1".to_string(),
    })
}

/// Serialize an SFT target: the token's surface form, a single space,
/// then the final text.
pub fn build_target(token: &ActionToken, final_text: &str) -> Result<String, PromptError> {
    if final_text.is_empty() {
        return Err(PromptError::EmptyTarget);
    }
    Ok(format!("{} {final_text}", token.render()))
}

/// Extract the leading action token and payload from a model emission.
/// Only the leading position is scanned; the remainder (trimmed) is the
/// payload, newlines preserved.
pub fn parse_model_output(text: &str) -> Result<(ActionToken, String), PromptError> {
    let trimmed = text.trim_start();
    if !trimmed.starts_with('<') {
        return Err(PromptError::NoActionToken(text.to_string()));
    }
    let close = trimmed
        .find('>')
        .ok_or_else(|| PromptError::NoActionToken(text.to_string()))?;
    let (raw_token, rest) = trimmed.split_at(close + 1);
    let token = ActionToken::parse(raw_token).map_err(|e| match e {
        TokenError::NoActionToken(s) => PromptError::NoActionToken(s),
        TokenError::UnknownTool(s) => PromptError::UnknownTool(s),
    })?;
    Ok((token, rest.trim().to_string()))
}

/// Resolve free-form answer text to an option, trying a leading letter
/// first (`C.`, `(c)`, bare `C`) and falling back to unique
/// case-insensitive containment of an option's text.
pub fn extract_choice(answer: &str, options: &OptionSet) -> Result<ChoiceId, PromptError> {
    let trimmed = answer.trim();
    if trimmed.is_empty() {
        return Err(PromptError::Unparseable(answer.to_string()));
    }
    if let Some(letter) = leading_letter(trimmed) {
        if let Some(choice) = options.get(letter) {
            return Ok(choice.clone());
        }
    }
    let lower = trimmed.to_lowercase();
    let matches: Vec<&ChoiceId> = options
        .iter()
        .filter(|c| !c.text.is_empty() && lower.contains(&c.text.to_lowercase()))
        .collect();
    match matches.len() {
        0 => Err(PromptError::Unparseable(answer.to_string())),
        1 => Ok(matches[0].clone()),
        _ => Err(PromptError::Ambiguous(answer.to_string())),
    }
}

fn leading_letter(trimmed: &str) -> Option<char> {
    let chars: Vec<char> = trimmed.chars().take(3).collect();
    match chars.as_slice() {
        [open, letter, close, ..]
            if (*open == '(' && *close == ')') || (*open == '[' && *close == ']') =>
        {
            letter.is_ascii_alphabetic().then(|| letter.to_ascii_uppercase())
        }
        [letter] if letter.is_ascii_alphabetic() => Some(letter.to_ascii_uppercase()),
        [letter, delim, ..]
            if letter.is_ascii_alphabetic() && matches!(delim, '.' | ')' | ':') =>
        {
            Some(letter.to_ascii_uppercase())
        }
        _ => None,
    }
}
