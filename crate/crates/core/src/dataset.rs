//! Evaluation units and dataset loading.
//!
//! A dataset is a JSONL file of [`Sample`] records. ASR samples carry a
//! gold transcript; QA samples carry a question, an ordered option set,
//! and a gold choice letter.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::prompt::{ChoiceId, OptionSet};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: invalid sample {sample_id:?}: {message}")]
    InvalidSample {
        path: String,
        line: usize,
        sample_id: String,
        message: String,
    },
    #[error("{path}:{line}: duplicate sample_id {sample_id:?} in dataset {dataset_id:?}")]
    DuplicateSampleId {
        path: String,
        line: usize,
        dataset_id: String,
        sample_id: String,
    },
}

/// One sidecar line: a sample that failed at some pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Asr,
    Qa,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Asr => f.write_str("asr"),
            TaskKind::Qa => f.write_str("qa"),
        }
    }
}

/// One evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub dataset_id: String,
    pub task: TaskKind,
    /// Opaque audio reference (path or URI); the harness never decodes audio.
    pub audio_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_transcript: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<OptionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_choice: Option<char>,
}

impl Sample {
    /// Check the per-task field requirements.
    pub fn check(&self) -> Result<(), String> {
        match self.task {
            TaskKind::Asr => {
                if self.gold_transcript.is_none() {
                    return Err("asr sample requires gold_transcript".to_string());
                }
            }
            TaskKind::Qa => {
                if self.question.is_none() {
                    return Err("qa sample requires question".to_string());
                }
                let options = self
                    .options
                    .as_ref()
                    .ok_or_else(|| "qa sample requires options".to_string())?;
                let gold = self
                    .gold_choice
                    .ok_or_else(|| "qa sample requires gold_choice".to_string())?;
                if options.get(gold).is_none() {
                    return Err(format!("gold_choice {gold:?} not in option set"));
                }
            }
        }
        Ok(())
    }

    /// Gold answer as a full choice (QA samples only).
    pub fn gold_choice_id(&self) -> Option<ChoiceId> {
        let options = self.options.as_ref()?;
        options.get(self.gold_choice?).cloned()
    }
}

/// Load and validate a dataset file. Sample ids must be unique within
/// each dataset id; violations report the offending line.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let display = path.display().to_string();
    let mut samples = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (line_no, line) in jsonl::read_lines(path)? {
        let sample: Sample = serde_json::from_str(&line)
            .map_err(|e| JsonlError::schema(path, line_no, e.to_string()))?;
        sample.check().map_err(|message| DatasetError::InvalidSample {
            path: display.clone(),
            line: line_no,
            sample_id: sample.sample_id.clone(),
            message,
        })?;
        let key = (sample.dataset_id.clone(), sample.sample_id.clone());
        if !seen.insert(key) {
            return Err(DatasetError::DuplicateSampleId {
                path: display,
                line: line_no,
                dataset_id: sample.dataset_id,
                sample_id: sample.sample_id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}
