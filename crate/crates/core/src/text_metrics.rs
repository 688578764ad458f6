//! Text normalization and token-level edit-distance alignment.
//!
//! Word error rate here is `(S + D + I) / reference_len` computed over
//! normalized, whitespace-split tokens. Alignment uses unit costs with a
//! deterministic tie-break (substitution preferred over deletion over
//! insertion) so op traces are reproducible. Corpus aggregation pools
//! edit and reference counts rather than averaging per-utterance rates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{ratio, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TextMetricsError {
    /// The normalized reference has zero tokens; the gold label is unusable.
    #[error("normalized reference is empty")]
    EmptyReference,
    #[error("empty corpus: no alignments to aggregate")]
    EmptyCorpus,
}

/// How raw text is canonicalized before tokenization.
///
/// The default lowercases, maps apostrophes to spaces, replaces the
/// remaining punctuation with spaces, and collapses whitespace. With
/// `apostrophe_to_space` off but `strip_punctuation` on, apostrophes are
/// deleted in place (`you'll` becomes `youll`) so words are not split.
/// Custom replacements are literal substring rewrites applied first, in
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationPolicy {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub collapse_whitespace: bool,
    pub apostrophe_to_space: bool,
    pub custom_replacements: Vec<(String, String)>,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            lowercase: true,
            strip_punctuation: true,
            collapse_whitespace: true,
            apostrophe_to_space: true,
            custom_replacements: Vec::new(),
        }
    }
}

/// Apply `policy` to `raw`. Deterministic, and idempotent for any policy
/// whose custom replacements have fixed-point outputs (the default
/// policy has none).
pub fn normalize_text(raw: &str, policy: &NormalizationPolicy) -> String {
    let mut text = raw.to_string();
    for (pattern, replacement) in &policy.custom_replacements {
        if !pattern.is_empty() {
            text = text.replace(pattern.as_str(), replacement);
        }
    }
    if policy.lowercase {
        text = text.to_lowercase();
    }
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\'' || c == '\u{2019}' {
            if policy.apostrophe_to_space {
                out.push(' ');
            } else if !policy.strip_punctuation {
                out.push(c);
            }
            // strip_punctuation without apostrophe_to_space deletes it
        } else if policy.strip_punctuation && !c.is_alphanumeric() && !c.is_whitespace() {
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    if policy.collapse_whitespace {
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        out
    }
}

/// Normalize then split into tokens.
pub fn normalize_tokens(raw: &str, policy: &NormalizationPolicy) -> Vec<String> {
    normalize_text(raw, policy)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// One step of an edit alignment, with token indices into the reference
/// and/or hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Correct { ref_index: usize, hyp_index: usize },
    Substitute { ref_index: usize, hyp_index: usize },
    Delete { ref_index: usize },
    Insert { hyp_index: usize },
}

/// Minimal-cost alignment between a reference and a hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub correct: usize,
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn edit_total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn reference_len(&self) -> usize {
        self.correct + self.substitutions + self.deletions
    }

    pub fn hypothesis_len(&self) -> usize {
        self.correct + self.substitutions + self.insertions
    }

    /// Error rate for this single alignment; `None` when the reference
    /// is empty.
    pub fn error_rate<F: Scalar>(&self) -> Option<F> {
        let ref_len = self.reference_len();
        if ref_len == 0 {
            None
        } else {
            Some(ratio(self.edit_total() as u64, ref_len as u64))
        }
    }
}

/// Minimal-cost token alignment under unit costs for substitution,
/// deletion, and insertion. When costs tie, substitution is preferred
/// over deletion over insertion, so the op trace is deterministic.
pub fn align_edit<T: AsRef<str>>(ref_tokens: &[T], hyp_tokens: &[T]) -> Alignment {
    let rlen = ref_tokens.len();
    let hlen = hyp_tokens.len();
    let mut dp = vec![vec![0usize; hlen + 1]; rlen + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=rlen {
        for j in 1..=hlen {
            let sub_cost = usize::from(ref_tokens[i - 1].as_ref() != hyp_tokens[j - 1].as_ref());
            let diag = dp[i - 1][j - 1] + sub_cost;
            let del = dp[i - 1][j] + 1;
            let ins = dp[i][j - 1] + 1;
            dp[i][j] = diag.min(del).min(ins);
        }
    }

    // Backtrack with the tie-break order: diagonal (correct/substitute),
    // then deletion, then insertion.
    let mut ops_rev = Vec::with_capacity(rlen.max(hlen));
    let (mut i, mut j) = (rlen, hlen);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(ref_tokens[i - 1].as_ref() != hyp_tokens[j - 1].as_ref());
            if dp[i][j] == dp[i - 1][j - 1] + sub_cost {
                let op = if sub_cost == 0 {
                    EditOp::Correct {
                        ref_index: i - 1,
                        hyp_index: j - 1,
                    }
                } else {
                    EditOp::Substitute {
                        ref_index: i - 1,
                        hyp_index: j - 1,
                    }
                };
                ops_rev.push(op);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops_rev.push(EditOp::Delete { ref_index: i - 1 });
            i -= 1;
            continue;
        }
        ops_rev.push(EditOp::Insert { hyp_index: j - 1 });
        j -= 1;
    }
    ops_rev.reverse();

    let mut alignment = Alignment {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        correct: 0,
        ops: ops_rev,
    };
    for op in &alignment.ops {
        match op {
            EditOp::Correct { .. } => alignment.correct += 1,
            EditOp::Substitute { .. } => alignment.substitutions += 1,
            EditOp::Delete { .. } => alignment.deletions += 1,
            EditOp::Insert { .. } => alignment.insertions += 1,
        }
    }
    debug_assert_eq!(alignment.edit_total(), dp[rlen][hlen]);
    alignment
}

/// Normalize both texts and align them. Errors if the normalized
/// reference is empty.
pub fn align_texts(
    reference: &str,
    hypothesis: &str,
    policy: &NormalizationPolicy,
) -> Result<Alignment, TextMetricsError> {
    let ref_tokens = normalize_tokens(reference, policy);
    if ref_tokens.is_empty() {
        return Err(TextMetricsError::EmptyReference);
    }
    let hyp_tokens = normalize_tokens(hypothesis, policy);
    Ok(align_edit(&ref_tokens, &hyp_tokens))
}

/// Word error rate of `hypothesis` against `reference` under `policy`.
/// May exceed 1.0 under heavy insertion.
pub fn wer<F: Scalar>(
    reference: &str,
    hypothesis: &str,
    policy: &NormalizationPolicy,
) -> Result<F, TextMetricsError> {
    let alignment = align_texts(reference, hypothesis, policy)?;
    Ok(ratio(
        alignment.edit_total() as u64,
        alignment.reference_len() as u64,
    ))
}

/// Pooled corpus WER: total edits over total reference tokens. This is
/// not the mean of per-utterance WERs, and it is invariant to input
/// order.
pub fn aggregate_wer<'a, F, I>(alignments: I) -> Result<F, TextMetricsError>
where
    F: Scalar,
    I: IntoIterator<Item = &'a Alignment>,
{
    let (edits, ref_len) = pooled_counts(alignments)?;
    if ref_len == 0 {
        return Err(TextMetricsError::EmptyReference);
    }
    Ok(ratio(edits, ref_len))
}

/// Pooled (edit_total, reference_len) sums; the exact integer form of
/// [`aggregate_wer`].
pub fn pooled_counts<'a, I>(alignments: I) -> Result<(u64, u64), TextMetricsError>
where
    I: IntoIterator<Item = &'a Alignment>,
{
    let mut edits = 0u64;
    let mut ref_len = 0u64;
    let mut any = false;
    for alignment in alignments {
        any = true;
        edits += alignment.edit_total() as u64;
        ref_len += alignment.reference_len() as u64;
    }
    if !any {
        return Err(TextMetricsError::EmptyCorpus);
    }
    Ok((edits, ref_len))
}
