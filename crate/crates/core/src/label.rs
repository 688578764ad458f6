//! Ground-truth action-token label construction for ASR and audio QA,
//! plus the corpus labeling pipeline that feeds SFT export.
//!
//! ASR labels compare the per-candidate WERs against the gold transcript;
//! since all three candidates share the reference, the comparison is done
//! on integer edit counts and is exact. QA labels use exact-match
//! correctness with a strict majority over the k external samples.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionToken;
use crate::config::RunConfig;
use crate::dataset::{Sample, SampleError, TaskKind};
use crate::gateway::Gateway;
use crate::hypothesis::HypothesisSet;
use crate::prompt::{self, build_target, ChoiceId, OptionSet};
use crate::router::{attach_ger, first_pass};
use crate::scalar::{ratio, Scalar};
use crate::text_metrics::{align_texts, NormalizationPolicy, TextMetricsError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error(transparent)]
    Text(#[from] TextMetricsError),
    #[error("hypothesis set has no rewrite/GER candidate")]
    MissingGer,
    #[error("hypothesis set has no internal hypothesis")]
    MissingInternal,
    #[error("hypothesis set has no external hypothesis")]
    MissingExternal,
    #[error("choice {letter:?} is not in the sample's option set")]
    InvalidChoice { letter: char },
}

/// Per-candidate WERs against the gold transcript.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateWers<F> {
    pub internal: F,
    pub external: F,
    pub ger: F,
}

/// Outcome of ASR labeling: the oracle token plus the WERs behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrLabel<F> {
    pub token: ActionToken,
    pub wers: CandidateWers<F>,
}

/// Label one ASR sample. The internal candidate wins when its WER is 0 or
/// no worse than both others; otherwise the external top-1 wins unless the
/// rewrite candidate is strictly better. Tie preference is internal over
/// external over rewrite.
pub fn label_asr<F: Scalar>(
    gold: &str,
    hyps: &HypothesisSet,
    policy: &NormalizationPolicy,
) -> Result<AsrLabel<F>, LabelError> {
    let internal = hyps.internal.as_ref().ok_or(LabelError::MissingInternal)?;
    let external = hyps.external_top1().ok_or(LabelError::MissingExternal)?;
    let ger = hyps.ger.as_ref().ok_or(LabelError::MissingGer)?;

    let a_int = align_texts(gold, &internal.text, policy)?;
    let a_ext = align_texts(gold, &external.text, policy)?;
    let a_ger = align_texts(gold, &ger.text, policy)?;

    // Identical references mean identical denominators, so the WER order
    // is exactly the edit-count order.
    let (e_int, e_ext, e_ger) = (a_int.edit_total(), a_ext.edit_total(), a_ger.edit_total());
    let token = if e_int <= e_ext.min(e_ger) {
        ActionToken::Internal
    } else if e_ext <= e_ger {
        ActionToken::External
    } else {
        ActionToken::Rewrite
    };

    let ref_len = a_int.reference_len() as u64;
    Ok(AsrLabel {
        token,
        wers: CandidateWers {
            internal: ratio(e_int as u64, ref_len),
            external: ratio(e_ext as u64, ref_len),
            ger: ratio(e_ger as u64, ref_len),
        },
    })
}

/// Label one QA sample. Internal wins iff the internal choice matches the
/// gold answer; otherwise external wins iff strictly more than half of the
/// k external samples match; otherwise rewrite.
///
/// `None` slots are predictions that failed to resolve to an option; they
/// count toward k but can never match the gold answer.
pub fn label_qa(
    gold: &ChoiceId,
    internal_choice: Option<&ChoiceId>,
    external_choices: &[Option<ChoiceId>],
    options: &OptionSet,
) -> Result<ActionToken, LabelError> {
    if external_choices.is_empty() {
        return Err(LabelError::MissingExternal);
    }
    for choice in std::iter::once(&gold.letter)
        .chain(internal_choice.iter().map(|c| &c.letter))
        .chain(external_choices.iter().flatten().map(|c| &c.letter))
    {
        if options.get(*choice).is_none() {
            return Err(LabelError::InvalidChoice { letter: *choice });
        }
    }
    if internal_choice.map(|c| c.letter) == Some(gold.letter) {
        return Ok(ActionToken::Internal);
    }
    let k = external_choices.len();
    let matching = external_choices
        .iter()
        .flatten()
        .filter(|c| c.letter == gold.letter)
        .count();
    if matching * 2 > k {
        Ok(ActionToken::External)
    } else {
        Ok(ActionToken::Rewrite)
    }
}

/// The gold answer of a labeled example: a transcript for ASR, a choice
/// for QA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldLabel {
    Text(String),
    Choice(ChoiceId),
}

impl GoldLabel {
    pub fn as_target_text(&self) -> String {
        match self {
            GoldLabel::Text(t) => t.clone(),
            GoldLabel::Choice(c) => c.render(),
        }
    }
}

/// One labeled training example, ready for SFT export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub sample_id: String,
    pub task: TaskKind,
    pub hypotheses: HypothesisSet,
    pub oracle_token: ActionToken,
    pub gold: GoldLabel,
    pub sft_target: String,
}

/// Output of a labeling run over a corpus.
#[derive(Debug)]
pub struct LabelRun {
    /// One entry per successfully labeled sample, in input order.
    pub labeled: Vec<LabeledExample>,
    /// Per-sample failures, in input order; the run does not abort.
    pub errors: Vec<SampleError>,
    /// Emitted token counts; always equal to the per-example sum.
    pub token_counts: BTreeMap<ActionToken, u64>,
}

enum LabelOutcome {
    Labeled(Box<LabeledExample>),
    Failed(SampleError),
}

/// Decode internal/external (and GER for ASR), label, and serialize the
/// SFT target for every sample. Per-sample failures are recorded without
/// aborting; output order equals input order regardless of worker count.
pub fn build_labeled_dataset(
    samples: &[Sample],
    gateway: &Gateway,
    mode: TaskKind,
    config: &RunConfig,
) -> LabelRun {
    let outcomes: Vec<LabelOutcome> = samples
        .par_iter()
        .map(|sample| match label_one(sample, gateway, mode, config) {
            Ok(example) => LabelOutcome::Labeled(Box::new(example)),
            Err(e) => LabelOutcome::Failed(e),
        })
        .collect();

    let mut run = LabelRun {
        labeled: Vec::new(),
        errors: Vec::new(),
        token_counts: BTreeMap::new(),
    };
    for outcome in outcomes {
        match outcome {
            LabelOutcome::Labeled(example) => {
                *run.token_counts.entry(example.oracle_token.clone()).or_insert(0) += 1;
                run.labeled.push(*example);
            }
            LabelOutcome::Failed(err) => run.errors.push(err),
        }
    }
    run
}

fn fail(sample: &Sample, stage: &str, error: impl std::fmt::Display) -> SampleError {
    SampleError {
        sample_id: sample.sample_id.clone(),
        stage: stage.to_string(),
        error: error.to_string(),
    }
}

fn label_one(
    sample: &Sample,
    gateway: &Gateway,
    mode: TaskKind,
    config: &RunConfig,
) -> Result<LabeledExample, SampleError> {
    if sample.task != mode {
        return Err(fail(
            sample,
            "validate",
            format!("sample task {} does not match labeling mode {mode}", sample.task),
        ));
    }
    match mode {
        TaskKind::Asr => label_one_asr(sample, gateway, config),
        TaskKind::Qa => label_one_qa(sample, gateway, config),
    }
}

fn label_one_asr(
    sample: &Sample,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<LabeledExample, SampleError> {
    let gold = sample
        .gold_transcript
        .as_ref()
        .ok_or_else(|| fail(sample, "validate", "missing gold_transcript"))?;

    let (mut hyps, _calls) = first_pass(sample, gateway, config)?;
    if hyps.internal.is_none() {
        return Err(fail(
            sample,
            "internal",
            hyps.internal_error.as_deref().unwrap_or("internal decode failed"),
        ));
    }
    attach_ger(sample, &mut hyps, gateway, config)?;

    let label = label_asr::<f64>(gold, &hyps, &config.normalization)
        .map_err(|e| fail(sample, "label", e))?;
    let sft_target =
        build_target(&label.token, gold).map_err(|e| fail(sample, "target", e))?;

    Ok(LabeledExample {
        sample_id: sample.sample_id.clone(),
        task: TaskKind::Asr,
        hypotheses: hyps,
        oracle_token: label.token,
        gold: GoldLabel::Text(gold.clone()),
        sft_target,
    })
}

fn label_one_qa(
    sample: &Sample,
    gateway: &Gateway,
    config: &RunConfig,
) -> Result<LabeledExample, SampleError> {
    let options = sample
        .options
        .as_ref()
        .ok_or_else(|| fail(sample, "validate", "missing options"))?;
    let gold = sample
        .gold_choice_id()
        .ok_or_else(|| fail(sample, "validate", "missing gold_choice"))?;

    let (hyps, _calls) = first_pass(sample, gateway, config)?;
    let internal = hyps
        .internal
        .as_ref()
        .ok_or_else(|| {
            fail(
                sample,
                "internal",
                hyps.internal_error.as_deref().unwrap_or("internal decode failed"),
            )
        })?;

    let internal_choice = prompt::extract_choice(&internal.text, options).ok();
    let external_choices: Vec<Option<ChoiceId>> = hyps
        .external_nbest
        .iter()
        .map(|h| prompt::extract_choice(&h.text, options).ok())
        .collect();

    let token = label_qa(&gold, internal_choice.as_ref(), &external_choices, options)
        .map_err(|e| fail(sample, "label", e))?;
    let sft_target =
        build_target(&token, &gold.render()).map_err(|e| fail(sample, "target", e))?;

    Ok(LabeledExample {
        sample_id: sample.sample_id.clone(),
        task: TaskKind::Qa,
        hypotheses: hyps,
        oracle_token: token,
        gold: GoldLabel::Choice(gold),
        sft_target,
    })
}
