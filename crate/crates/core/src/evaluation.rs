//! Every reported metric: per-dataset and average WER, QA accuracy,
//! per-token precision/recall/F1 with distributions, confusion matrices,
//! and oracle bounds, plus deterministic CSV/text rendering.
//!
//! All counting is integer; ratios are produced at the edges via
//! [`Scalar`]. Zero-denominator precision/recall/F1 are defined as 0.
//! `token_metrics` counts TP/FP/FN directly from the pair stream while
//! [`ConfusionMatrix::prf`] derives them from matrix marginals; the two
//! paths are kept independent so they can cross-check each other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionToken;
use crate::dataset::{Sample, TaskKind};
use crate::hypothesis::HypothesisSet;
use crate::prompt::{extract_choice, ChoiceId, OptionSet};
use crate::router::RoutingTrace;
use crate::scalar::{ratio, ratio_or_zero, Scalar};
use crate::text_metrics::{align_texts, NormalizationPolicy, TextMetricsError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("predicted and oracle token lists differ in length ({predicted} vs {oracle})")]
    LengthMismatch { predicted: usize, oracle: usize },
    #[error("sample {0:?} has no gold label")]
    MissingGold(String),
    #[error("trace references unknown sample {0:?}")]
    UnknownSample(String),
    #[error("sample {0:?} has no candidates to take a bound over")]
    NoCandidates(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Text(#[from] TextMetricsError),
}

/// Canonical report order: the three core tokens, then tool tokens sorted
/// by name, restricted to tools that actually occur.
fn label_universe(streams: &[&[ActionToken]]) -> Vec<ActionToken> {
    let mut labels: Vec<ActionToken> = ActionToken::core_tokens().to_vec();
    let mut tools: Vec<ActionToken> = streams
        .iter()
        .flat_map(|s| s.iter())
        .filter(|t| !t.is_core())
        .cloned()
        .collect();
    tools.sort();
    tools.dedup();
    labels.extend(tools);
    labels
}

/// Square count matrix: rows are oracle labels, columns are predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<ActionToken>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let n = self.labels.len();
        (0..n).map(|j| self.counts.iter().map(|row| row[j]).sum()).collect()
    }

    fn index_of(&self, token: &ActionToken) -> Option<usize> {
        self.labels.iter().position(|l| l == token)
    }

    /// Precision/recall/F1 for one label, derived from matrix marginals.
    /// Zero denominators yield 0.
    pub fn prf<F: Scalar>(&self, token: &ActionToken) -> Option<(F, F, F)> {
        let i = self.index_of(token)?;
        let tp = self.counts[i][i];
        let fp = self.col_sums()[i] - tp;
        let fn_ = self.row_sums()[i] - tp;
        let precision = ratio_or_zero::<F>(tp, tp + fp);
        let recall = ratio_or_zero::<F>(tp, tp + fn_);
        let f1 = f1_of(precision, recall);
        Some((precision, recall, f1))
    }
}

fn f1_of<F: Scalar>(precision: F, recall: F) -> F {
    let denom = precision + recall;
    if denom == F::zero() {
        F::zero()
    } else {
        (F::one() + F::one()) * precision * recall / denom
    }
}

/// Build the confusion matrix `counts[i][j] = #{oracle==i && predicted==j}`.
pub fn confusion(
    predicted: &[ActionToken],
    oracle: &[ActionToken],
) -> Result<ConfusionMatrix, EvalError> {
    if predicted.len() != oracle.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            oracle: oracle.len(),
        });
    }
    let labels = label_universe(&[predicted, oracle]);
    let index: BTreeMap<&ActionToken, usize> =
        labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (p, o) in predicted.iter().zip(oracle) {
        counts[index[o]][index[p]] += 1;
    }
    Ok(ConfusionMatrix { labels, counts })
}

/// Per-token precision/recall/F1 plus the backing counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPrf<F> {
    pub token: ActionToken,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: F,
    pub recall: F,
    pub f1: F,
    /// False when the token appears in neither stream; its zeros are
    /// definitional, not measured.
    pub supported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMetricsReport<F> {
    pub per_token: Vec<TokenPrf<F>>,
    pub oracle_distribution: Vec<(ActionToken, u64)>,
    pub predicted_distribution: Vec<(ActionToken, u64)>,
}

/// Compute per-token P/R/F1 by direct pair counting (no confusion matrix
/// involved), along with oracle and predicted token distributions.
pub fn token_metrics<F: Scalar>(
    predicted: &[ActionToken],
    oracle: &[ActionToken],
) -> Result<TokenMetricsReport<F>, EvalError> {
    if predicted.len() != oracle.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            oracle: oracle.len(),
        });
    }
    let labels = label_universe(&[predicted, oracle]);
    let mut per_token = Vec::with_capacity(labels.len());
    let mut oracle_distribution = Vec::with_capacity(labels.len());
    let mut predicted_distribution = Vec::with_capacity(labels.len());
    for token in &labels {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        let mut oracle_count = 0u64;
        let mut predicted_count = 0u64;
        for (p, o) in predicted.iter().zip(oracle) {
            let is_pred = p == token;
            let is_oracle = o == token;
            if is_pred {
                predicted_count += 1;
            }
            if is_oracle {
                oracle_count += 1;
            }
            match (is_pred, is_oracle) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = ratio_or_zero::<F>(tp, tp + fp);
        let recall = ratio_or_zero::<F>(tp, tp + fn_);
        per_token.push(TokenPrf {
            token: token.clone(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: f1_of(precision, recall),
            supported: oracle_count + predicted_count > 0,
        });
        oracle_distribution.push((token.clone(), oracle_count));
        predicted_distribution.push((token.clone(), predicted_count));
    }
    Ok(TokenMetricsReport {
        per_token,
        oracle_distribution,
        predicted_distribution,
    })
}

/// One dataset's row in a report. `numerator/denominator` is the exact
/// integer form of `value` (edits/ref-tokens for WER, correct/total for
/// accuracy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics<F> {
    pub dataset_id: String,
    pub value: F,
    pub numerator: u64,
    pub denominator: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<F> {
    pub task: TaskKind,
    /// "wer" or "accuracy".
    pub metric_name: String,
    pub per_dataset: Vec<DatasetMetrics<F>>,
    /// Unweighted mean of per-dataset values (the summary-column
    /// convention for WER tables).
    pub macro_average: F,
    /// Pooled over all samples: overall edits/ref-tokens for WER,
    /// overall correct/total (size-weighted) for accuracy.
    pub weighted_average: F,
    /// How often each action token was decided at inference time.
    pub decision_distribution: Vec<(ActionToken, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_metrics: Option<TokenMetricsReport<F>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_bound: Option<F>,
    /// QA answers that did not resolve to an option (counted incorrect).
    pub unparseable_answers: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

fn decision_distribution(traces: &[RoutingTrace]) -> Vec<(ActionToken, u64)> {
    let decisions: Vec<ActionToken> = traces.iter().map(|t| t.decision.clone()).collect();
    label_universe(&[&decisions])
        .into_iter()
        .map(|label| {
            let count = decisions.iter().filter(|d| **d == label).count() as u64;
            (label, count)
        })
        .collect()
}

fn finish_report<F: Scalar>(
    task: TaskKind,
    metric_name: &str,
    groups: BTreeMap<String, (u64, u64, u64)>,
    decision_distribution: Vec<(ActionToken, u64)>,
    unparseable: u64,
) -> Result<EvalReport<F>, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut per_dataset = Vec::with_capacity(groups.len());
    let (mut num_total, mut den_total) = (0u64, 0u64);
    let mut macro_sum = F::zero();
    for (dataset_id, (num, den, samples)) in groups {
        let value = ratio_or_zero::<F>(num, den);
        macro_sum = macro_sum + value;
        num_total += num;
        den_total += den;
        per_dataset.push(DatasetMetrics {
            dataset_id,
            value,
            numerator: num,
            denominator: den,
            samples,
        });
    }
    let count = F::from_usize(per_dataset.len()).unwrap();
    Ok(EvalReport {
        task,
        metric_name: metric_name.to_string(),
        per_dataset,
        macro_average: macro_sum / count,
        weighted_average: ratio_or_zero::<F>(num_total, den_total),
        decision_distribution,
        token_metrics: None,
        confusion: None,
        oracle_bound: None,
        unparseable_answers: unparseable,
        manifest: None,
    })
}

fn sample_index(samples: &[Sample]) -> BTreeMap<&str, &Sample> {
    samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
}

/// Pooled corpus WER per dataset plus macro and pooled-overall averages.
pub fn eval_asr<F: Scalar>(
    traces: &[RoutingTrace],
    samples: &[Sample],
    policy: &NormalizationPolicy,
) -> Result<EvalReport<F>, EvalError> {
    let index = sample_index(samples);
    let mut groups: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for trace in traces {
        let sample = index
            .get(trace.sample_id.as_str())
            .ok_or_else(|| EvalError::UnknownSample(trace.sample_id.clone()))?;
        let gold = sample
            .gold_transcript
            .as_ref()
            .ok_or_else(|| EvalError::MissingGold(trace.sample_id.clone()))?;
        let alignment = align_texts(gold, &trace.final_text, policy)?;
        let entry = groups.entry(sample.dataset_id.clone()).or_insert((0, 0, 0));
        entry.0 += alignment.edit_total() as u64;
        entry.1 += alignment.reference_len() as u64;
        entry.2 += 1;
    }
    finish_report(TaskKind::Asr, "wer", groups, decision_distribution(traces), 0)
}

/// Accuracy per dataset subset; answers that fail to resolve to an option
/// are counted incorrect and tallied in `unparseable_answers`.
pub fn eval_qa<F: Scalar>(
    traces: &[RoutingTrace],
    samples: &[Sample],
) -> Result<EvalReport<F>, EvalError> {
    let index = sample_index(samples);
    let mut groups: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut unparseable = 0u64;
    for trace in traces {
        let sample = index
            .get(trace.sample_id.as_str())
            .ok_or_else(|| EvalError::UnknownSample(trace.sample_id.clone()))?;
        let options = sample
            .options
            .as_ref()
            .ok_or_else(|| EvalError::MissingGold(trace.sample_id.clone()))?;
        let gold = sample
            .gold_choice_id()
            .ok_or_else(|| EvalError::MissingGold(trace.sample_id.clone()))?;
        let correct = match extract_choice(&trace.final_text, options) {
            Ok(choice) => choice.letter == gold.letter,
            Err(_) => {
                unparseable += 1;
                false
            }
        };
        let entry = groups.entry(sample.dataset_id.clone()).or_insert((0, 0, 0));
        entry.0 += u64::from(correct);
        entry.1 += 1;
        entry.2 += 1;
    }
    finish_report(
        TaskKind::Qa,
        "accuracy",
        groups,
        decision_distribution(traces),
        unparseable,
    )
}

/// One sample's inputs for the ASR oracle bound.
pub struct AsrOracleCase<'a> {
    pub hyps: &'a HypothesisSet,
    pub gold: &'a str,
}

/// One sample's inputs for the QA oracle bound.
pub struct QaOracleCase<'a> {
    pub hyps: &'a HypothesisSet,
    pub gold: &'a ChoiceId,
    pub options: &'a OptionSet,
}

/// Exact integer form of the ASR oracle bound: pooled
/// (best-candidate edits, reference tokens). Every available candidate
/// counts: internal, each external hypothesis, and the rewrite candidate.
pub fn oracle_pooled_counts_asr(
    cases: &[AsrOracleCase<'_>],
    policy: &NormalizationPolicy,
) -> Result<(u64, u64), EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut edits = 0u64;
    let mut ref_len = 0u64;
    for case in cases {
        let mut best: Option<(usize, usize)> = None;
        let candidates = case
            .hyps
            .internal
            .iter()
            .chain(case.hyps.external_nbest.iter())
            .chain(case.hyps.ger.iter());
        for candidate in candidates {
            let alignment = align_texts(case.gold, &candidate.text, policy)?;
            let pair = (alignment.edit_total(), alignment.reference_len());
            best = Some(match best {
                Some(current) if current.0 <= pair.0 => current,
                _ => pair,
            });
        }
        let (e, r) = best.ok_or_else(|| EvalError::NoCandidates(String::new()))?;
        edits += e as u64;
        ref_len += r as u64;
    }
    Ok((edits, ref_len))
}

/// ASR oracle bound: pooled WER taking the per-sample argmin-WER
/// candidate. Lower-bounds the WER of every arbitration policy over the
/// same hypothesis sets.
pub fn oracle_bound_asr<F: Scalar>(
    cases: &[AsrOracleCase<'_>],
    policy: &NormalizationPolicy,
) -> Result<F, EvalError> {
    let (edits, ref_len) = oracle_pooled_counts_asr(cases, policy)?;
    if ref_len == 0 {
        return Err(EvalError::Text(TextMetricsError::EmptyReference));
    }
    Ok(ratio(edits, ref_len))
}

/// Number of QA samples whose gold answer is reachable from some
/// candidate; the exact integer form of [`oracle_bound_qa`].
pub fn oracle_hits_qa(cases: &[QaOracleCase<'_>]) -> u64 {
    let mut correct = 0u64;
    for case in cases {
        let hit = |text: &str| {
            extract_choice(text, case.options)
                .map(|c| c.letter == case.gold.letter)
                .unwrap_or(false)
        };
        let internal_hit = case.hyps.internal_text().map(hit).unwrap_or(false);
        let external_hit = case.hyps.external_nbest.iter().any(|h| hit(&h.text));
        if internal_hit || external_hit {
            correct += 1;
        }
    }
    correct
}

/// QA oracle bound: a sample counts correct when any candidate (internal
/// or any external sample) resolves to the gold answer.
pub fn oracle_bound_qa<F: Scalar>(cases: &[QaOracleCase<'_>]) -> Result<F, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(ratio(oracle_hits_qa(cases), cases.len() as u64))
}

// ---------------------------------------------------------------------------
// Rendering

fn fmt_scalar<F: Scalar>(value: F) -> String {
    format!("{value}")
}

/// Per-dataset metric table as CSV. Deterministic: fixed column order,
/// shortest-round-trip floats, rows in dataset order.
pub fn render_metrics_csv<F: Scalar>(report: &EvalReport<F>) -> String {
    let mut out = String::from("dataset_id,metric,value,numerator,denominator,samples\n");
    for row in &report.per_dataset {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&row.dataset_id),
            report.metric_name,
            fmt_scalar(row.value),
            row.numerator,
            row.denominator,
            row.samples
        ));
    }
    out.push_str(&format!(
        "macro_average,{},{},,,\n",
        report.metric_name,
        fmt_scalar(report.macro_average)
    ));
    out.push_str(&format!(
        "weighted_average,{},{},,,\n",
        report.metric_name,
        fmt_scalar(report.weighted_average)
    ));
    if let Some(bound) = report.oracle_bound {
        out.push_str(&format!(
            "oracle_bound,{},{},,,\n",
            report.metric_name,
            fmt_scalar(bound)
        ));
    }
    out
}

/// Per-token P/R/F1 table as CSV; header-only when absent.
pub fn render_token_metrics_csv<F: Scalar>(report: &EvalReport<F>) -> String {
    let mut out = String::from(
        "token,precision,recall,f1,true_positives,false_positives,false_negatives,oracle_count,predicted_count,supported\n",
    );
    if let Some(tm) = &report.token_metrics {
        for (row, (dist_o, dist_p)) in tm
            .per_token
            .iter()
            .zip(tm.oracle_distribution.iter().zip(&tm.predicted_distribution))
        {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                row.token.render(),
                fmt_scalar(row.precision),
                fmt_scalar(row.recall),
                fmt_scalar(row.f1),
                row.true_positives,
                row.false_positives,
                row.false_negatives,
                dist_o.1,
                dist_p.1,
                row.supported
            ));
        }
    }
    out
}

/// Confusion matrix as a CSV grid (rows oracle, columns predicted).
pub fn render_confusion_csv(matrix: &ConfusionMatrix) -> String {
    let mut out = String::from("oracle\\predicted");
    for label in &matrix.labels {
        out.push(',');
        out.push_str(&label.render());
    }
    out.push('\n');
    for (label, row) in matrix.labels.iter().zip(&matrix.counts) {
        out.push_str(&label.render());
        for count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}

/// Human-oriented aligned text table for stdout.
pub fn render_text_table<F: Scalar>(report: &EvalReport<F>) -> String {
    let width = report
        .per_dataset
        .iter()
        .map(|r| r.dataset_id.len())
        .chain(["weighted_average".len()])
        .max()
        .unwrap_or(8);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>10}  {:>12}\n",
        "dataset",
        report.metric_name.as_str(),
        "samples",
        "counts",
        width = width
    );
    for row in &report.per_dataset {
        out.push_str(&format!(
            "{:<width$}  {:>12.6}  {:>10}  {:>7}/{}\n",
            row.dataset_id,
            row.value,
            row.samples,
            row.numerator,
            row.denominator,
            width = width
        ));
    }
    out.push_str(&format!(
        "{:<width$}  {:>12.6}\n",
        "macro_average",
        report.macro_average,
        width = width
    ));
    out.push_str(&format!(
        "{:<width$}  {:>12.6}\n",
        "weighted_average",
        report.weighted_average,
        width = width
    ));
    if let Some(bound) = report.oracle_bound {
        out.push_str(&format!(
            "{:<width$}  {:>12.6}\n",
            "oracle_bound",
            bound,
            width = width
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionToken as T;

    fn toks(s: &str) -> Vec<ActionToken> {
        s.chars()
            .map(|c| match c {
                'i' => T::Internal,
                'e' => T::External,
                'r' => T::Rewrite,
                _ => panic!("bad token char"),
            })
            .collect()
    }

    #[test]
    fn perfect_prediction_scores_one_everywhere() {
        let oracle = toks("iierr");
        let report = token_metrics::<f64>(&oracle, &oracle).unwrap();
        for row in &report.per_token {
            if row.supported {
                assert_eq!((row.precision, row.recall, row.f1), (1.0, 1.0, 1.0));
            }
        }
    }

    // Hand-computed 3x3 case: oracle [i,i,e,r], predicted [i,e,e,e].
    #[test]
    fn external_prf_hand_case() {
        let oracle = toks("iier");
        let predicted = toks("ieee");
        let report = token_metrics::<f64>(&predicted, &oracle).unwrap();
        let ext = report
            .per_token
            .iter()
            .find(|r| r.token == T::External)
            .unwrap();
        assert_eq!(ext.precision, 1.0 / 3.0);
        assert_eq!(ext.recall, 1.0);
        assert_eq!(ext.f1, 0.5);
        let re = report
            .per_token
            .iter()
            .find(|r| r.token == T::Rewrite)
            .unwrap();
        assert_eq!((re.precision, re.recall, re.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn absent_token_is_defined_zero_and_unsupported() {
        let oracle = toks("iie");
        let predicted = toks("iie");
        let report = token_metrics::<f64>(&predicted, &oracle).unwrap();
        let re = report
            .per_token
            .iter()
            .find(|r| r.token == T::Rewrite)
            .unwrap();
        assert_eq!((re.precision, re.recall, re.f1), (0.0, 0.0, 0.0));
        assert!(!re.supported);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            token_metrics::<f64>(&toks("ii"), &toks("i")),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&toks("ii"), &toks("i")),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn confusion_diagonal_when_equal() {
        let oracle = toks("iieer");
        let m = confusion(&oracle, &oracle).unwrap();
        for (i, row) in m.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(c, 0);
                }
            }
        }
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn confusion_hand_case_and_marginals() {
        let oracle = toks("iier");
        let predicted = toks("ieee");
        let m = confusion(&predicted, &oracle).unwrap();
        // rows: oracle internal, external, rewrite
        assert_eq!(m.counts[0], vec![1, 1, 0]);
        assert_eq!(m.counts[1], vec![0, 1, 0]);
        assert_eq!(m.counts[2], vec![0, 1, 0]);
        assert_eq!(m.row_sums(), vec![2, 1, 1]);
        assert_eq!(m.col_sums(), vec![1, 3, 0]);
    }

    #[test]
    fn prf_from_matrix_matches_token_metrics() {
        let oracle = toks("iieerrriee");
        let predicted = toks("ieereirree");
        let direct = token_metrics::<f64>(&predicted, &oracle).unwrap();
        let matrix = confusion(&predicted, &oracle).unwrap();
        for row in &direct.per_token {
            let (p, r, f) = matrix.prf::<f64>(&row.token).unwrap();
            assert_eq!((p, r, f), (row.precision, row.recall, row.f1));
        }
    }

    #[test]
    fn rare_but_precise_rewrite_has_precision_above_recall() {
        let oracle = toks("rrri");
        let predicted = toks("riii");
        let report = token_metrics::<f64>(&predicted, &oracle).unwrap();
        let re = report
            .per_token
            .iter()
            .find(|r| r.token == T::Rewrite)
            .unwrap();
        assert!(re.precision > re.recall);
        assert_eq!(re.precision, 1.0);
        assert_eq!(re.recall, 1.0 / 3.0);
    }

    fn trace(sample_id: &str, final_text: &str) -> crate::router::RoutingTrace {
        crate::router::RoutingTrace {
            sample_id: sample_id.to_string(),
            hypotheses: crate::hypothesis::HypothesisSet::new(
                crate::hypothesis::Hypothesis::bare(final_text),
                vec![crate::hypothesis::Hypothesis::bare(final_text)],
            ),
            decision: T::Internal,
            decision_source: "fixed".to_string(),
            tool_applications: Vec::new(),
            final_text: final_text.to_string(),
            calls: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn asr_sample(id: &str, dataset: &str, gold: &str) -> Sample {
        Sample {
            sample_id: id.to_string(),
            dataset_id: dataset.to_string(),
            task: TaskKind::Asr,
            audio_ref: format!("audio/{id}.wav"),
            gold_transcript: Some(gold.to_string()),
            question: None,
            options: None,
            gold_choice: None,
        }
    }

    fn qa_sample(id: &str, dataset: &str, gold: char) -> Sample {
        Sample {
            sample_id: id.to_string(),
            dataset_id: dataset.to_string(),
            task: TaskKind::Qa,
            audio_ref: format!("audio/{id}.wav"),
            gold_transcript: None,
            question: Some("Which?".to_string()),
            options: Some(
                OptionSet::new(vec![
                    ChoiceId::new('A', "alpha"),
                    ChoiceId::new('B', "bravo"),
                    ChoiceId::new('C', "charlie"),
                    ChoiceId::new('D', "delta"),
                ])
                .unwrap(),
            ),
            gold_choice: Some(gold),
        }
    }

    #[test]
    fn eval_asr_pools_edits_over_reference_tokens() {
        // Two utterances with 1 edit over 4 tokens and 1 edit over 1
        // token pool to 2/5, not mean(0.25, 1.0).
        let samples = vec![asr_sample("u1", "d", "a b c d"), asr_sample("u2", "d", "q")];
        let traces = vec![trace("u1", "a b x d"), trace("u2", "z")];
        let report = eval_asr::<f64>(&traces, &samples, &NormalizationPolicy::default()).unwrap();
        assert_eq!(report.per_dataset.len(), 1);
        assert_eq!(report.per_dataset[0].numerator, 2);
        assert_eq!(report.per_dataset[0].denominator, 5);
        assert_eq!(report.weighted_average, 0.4);
        assert_eq!(report.macro_average, 0.4);
        assert_eq!(
            report.decision_distribution,
            vec![(T::Internal, 2), (T::External, 0), (T::Rewrite, 0)]
        );
    }

    #[test]
    fn eval_asr_macro_averages_across_datasets() {
        let samples = vec![
            asr_sample("u1", "clean", "a b c d"),
            asr_sample("u2", "noisy", "a b"),
        ];
        let traces = vec![trace("u1", "a b c d"), trace("u2", "a x")];
        let report = eval_asr::<f64>(&traces, &samples, &NormalizationPolicy::default()).unwrap();
        assert_eq!(report.per_dataset.len(), 2);
        // clean 0.0, noisy 0.5: macro 0.25, pooled 1/6.
        assert_eq!(report.macro_average, 0.25);
        assert_eq!(report.weighted_average, 1.0 / 6.0);
    }

    #[test]
    fn eval_asr_missing_sample_is_error() {
        let samples = vec![asr_sample("u1", "d", "a")];
        let traces = vec![trace("ghost", "a")];
        assert!(matches!(
            eval_asr::<f64>(&traces, &samples, &NormalizationPolicy::default()),
            Err(EvalError::UnknownSample(_))
        ));
    }

    #[test]
    fn eval_qa_counts_correct_and_tallies_unparseable() {
        let samples: Vec<Sample> = (0..4).map(|i| qa_sample(&format!("q{i}"), "d", 'C')).collect();
        let traces = vec![
            trace("q0", "C. charlie"),
            trace("q1", "charlie"),
            trace("q2", "B. bravo"),
            trace("q3", "mumble mumble"),
        ];
        let report = eval_qa::<f64>(&traces, &samples).unwrap();
        // q0 and q1 correct (letter and containment), q2 wrong, q3
        // unparseable and therefore wrong.
        assert_eq!(report.per_dataset[0].numerator, 2);
        assert_eq!(report.per_dataset[0].denominator, 4);
        assert_eq!(report.weighted_average, 0.5);
        assert_eq!(report.unparseable_answers, 1);
    }

    #[test]
    fn eval_qa_all_correct_is_one() {
        let samples: Vec<Sample> = (0..3).map(|i| qa_sample(&format!("q{i}"), "d", 'B')).collect();
        let traces: Vec<_> = (0..3).map(|i| trace(&format!("q{i}"), "B. bravo")).collect();
        let report = eval_qa::<f64>(&traces, &samples).unwrap();
        assert_eq!(report.weighted_average, 1.0);
        assert_eq!(report.unparseable_answers, 0);
    }

    #[test]
    fn qa_weighted_average_weights_by_subset_size() {
        // Subset "big" has 3 samples (2 correct), subset "small" has 1
        // (correct): macro (2/3 + 1)/2, weighted 3/4.
        let mut samples: Vec<Sample> = (0..3).map(|i| qa_sample(&format!("b{i}"), "big", 'A')).collect();
        samples.push(qa_sample("s0", "small", 'A'));
        let traces = vec![
            trace("b0", "A. alpha"),
            trace("b1", "A. alpha"),
            trace("b2", "B. bravo"),
            trace("s0", "A. alpha"),
        ];
        let report = eval_qa::<f64>(&traces, &samples).unwrap();
        assert_eq!(report.weighted_average, 0.75);
        assert_eq!(report.macro_average, (2.0 / 3.0 + 1.0) / 2.0);
    }

    #[test]
    fn qa_oracle_bound_is_one_when_any_candidate_correct() {
        use crate::hypothesis::{Hypothesis, HypothesisSet};
        let options = qa_sample("q", "d", 'C').options.unwrap();
        let gold = options.get('C').unwrap().clone();
        let internal_right = HypothesisSet::new(
            Hypothesis::bare("C. charlie"),
            vec![Hypothesis::bare("B. bravo")],
        );
        let external_right = HypothesisSet::new(
            Hypothesis::bare("A. alpha"),
            vec![Hypothesis::bare("D. delta"), Hypothesis::bare("C. charlie")],
        );
        let cases = vec![
            QaOracleCase { hyps: &internal_right, gold: &gold, options: &options },
            QaOracleCase { hyps: &external_right, gold: &gold, options: &options },
        ];
        assert_eq!(oracle_bound_qa::<f64>(&cases).unwrap(), 1.0);
    }

    #[test]
    fn asr_oracle_bound_equals_fixed_metric_when_candidates_identical() {
        use crate::hypothesis::{Hypothesis, HypothesisSet};
        let policy = NormalizationPolicy::default();
        let hyps = HypothesisSet::new(
            Hypothesis::bare("a b x d"),
            vec![Hypothesis::bare("a b x d")],
        )
        .with_ger(Hypothesis::bare("a b x d"));
        let cases = vec![AsrOracleCase { hyps: &hyps, gold: "a b c d" }];
        let bound: f64 = oracle_bound_asr(&cases, &policy).unwrap();
        // Any fixed policy returns the same candidate text, so the bound
        // equals that candidate's WER exactly.
        let fixed: f64 = crate::text_metrics::wer("a b c d", "a b x d", &policy).unwrap();
        assert_eq!(bound, fixed);
        assert_eq!(bound, 0.25);
    }

    #[test]
    fn asr_oracle_bound_considers_every_external_hypothesis() {
        use crate::hypothesis::{Hypothesis, HypothesisSet};
        let policy = NormalizationPolicy::default();
        // Top-1 is poor; a deeper n-best entry is exact.
        let hyps = HypothesisSet::new(
            Hypothesis::bare("x x x x"),
            vec![Hypothesis::bare("a x c d"), Hypothesis::bare("a b c d")],
        );
        let cases = vec![AsrOracleCase { hyps: &hyps, gold: "a b c d" }];
        let bound: f64 = oracle_bound_asr(&cases, &policy).unwrap();
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn csv_renders_are_deterministic_and_idempotent() {
        let oracle = toks("iier");
        let predicted = toks("ieee");
        let mut report = EvalReport::<f64> {
            task: TaskKind::Qa,
            metric_name: "accuracy".to_string(),
            per_dataset: vec![DatasetMetrics {
                dataset_id: "d1".to_string(),
                value: 0.75,
                numerator: 3,
                denominator: 4,
                samples: 4,
            }],
            macro_average: 0.75,
            weighted_average: 0.75,
            decision_distribution: vec![(T::Internal, 4)],
            token_metrics: Some(token_metrics(&predicted, &oracle).unwrap()),
            confusion: Some(confusion(&predicted, &oracle).unwrap()),
            oracle_bound: Some(1.0),
            unparseable_answers: 0,
            manifest: None,
        };
        let a = render_metrics_csv(&report);
        let b = render_metrics_csv(&report);
        assert_eq!(a, b);
        assert!(a.starts_with("dataset_id,metric,value,"));
        assert!(a.contains("oracle_bound,accuracy,1"));
        let grid = render_confusion_csv(report.confusion.as_ref().unwrap());
        assert!(grid.starts_with("oracle\\predicted,<internal>,<external>,<rewrite>"));
        assert!(grid.contains("<internal>,1,1,0"));

        report.token_metrics = None;
        let header_only = render_token_metrics_csv(&report);
        assert_eq!(header_only.lines().count(), 1);
    }
}
