//! Uncertainty scoring, challenge-set selection and application of
//! correction directives.

mod apply;
mod select;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::TokenLogprob;
use crate::schema::Annotation;

pub use apply::{apply_directives, CorrectionStats};
pub use select::{plan_batches, select_for_correction, SelectionParams};

#[derive(Debug, Error, PartialEq)]
pub enum CorrectionError {
    #[error("cannot score an empty token list")]
    EmptyTokenList,
    #[error("token range {start}..{end} invalid for {len} tokens")]
    InvalidRange { start: usize, end: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "value", rename_all = "snake_case")]
pub enum CorrectionAction {
    Keep,
    ReviseSpan(String),
    ReviseType(String),
    Drop,
}

/// One item's answer as read from a correction completion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub action: CorrectionAction,
    pub malformed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirectiveTarget {
    pub sample_id: usize,
    pub annotation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionDirective {
    pub target: DirectiveTarget,
    #[serde(flatten)]
    pub action: CorrectionAction,
    /// Set when the model's answer was missing or unreadable.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub invalid: bool,
}

impl CorrectionDirective {
    pub fn new(target: DirectiveTarget, action: CorrectionAction) -> Self {
        Self {
            target,
            action,
            invalid: false,
        }
    }

    /// Pairs parsed answers with the batch targets they answer.
    pub fn from_answers(targets: &[DirectiveTarget], answers: Vec<ParsedAnswer>) -> Vec<Self> {
        targets
            .iter()
            .zip(answers)
            .map(|(&target, a)| Self {
                target,
                action: a.action,
                invalid: a.malformed,
            })
            .collect()
    }
}

/// Mean log-probability.
pub fn score_logprob(logprobs: &[f64]) -> Result<f64, CorrectionError> {
    if logprobs.is_empty() {
        return Err(CorrectionError::EmptyTokenList);
    }
    Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

/// Mean negated loss over the span's tokens plus one neighbour on each side,
/// clipped to the sentence.
pub fn score_loss_window(losses: &[f64], span: Range<usize>) -> Result<f64, CorrectionError> {
    if span.start >= span.end || span.end > losses.len() {
        return Err(CorrectionError::InvalidRange {
            start: span.start,
            end: span.end,
            len: losses.len(),
        });
    }
    let window = &losses[span.start.saturating_sub(1)..(span.end + 1).min(losses.len())];
    Ok(-window.iter().sum::<f64>() / window.len() as f64)
}

/// Log-probs of the completion tokens whose byte ranges intersect `range`.
/// Token offsets accumulate from the token texts.
pub fn align_logprobs(tokens: &[TokenLogprob], range: &Range<usize>) -> Vec<f64> {
    let mut offset = 0;
    let mut out = Vec::new();
    for t in tokens {
        let end = offset + t.token.len();
        if offset < range.end && range.start < end {
            out.push(t.logprob);
        }
        if offset >= range.end {
            break;
        }
        offset = end;
    }
    out
}

/// One generated annotation with its uncertainty score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: usize,
    pub annotation_index: usize,
    pub annotation: Annotation,
    pub token_logprobs: Vec<f64>,
    pub score: f64,
}

impl AnnotationRecord {
    pub fn new(
        sample_id: usize,
        annotation_index: usize,
        annotation: Annotation,
        token_logprobs: Vec<f64>,
    ) -> Result<Self, CorrectionError> {
        let score = score_logprob(&token_logprobs)?;
        Ok(Self {
            sample_id,
            annotation_index,
            annotation,
            token_logprobs,
            score,
        })
    }

    pub fn target(&self) -> DirectiveTarget {
        DirectiveTarget {
            sample_id: self.sample_id,
            annotation: self.annotation_index,
        }
    }
}
