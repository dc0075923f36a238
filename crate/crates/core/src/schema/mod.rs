//! Domain types for task specs and NER samples.
//!
//! A [`NerSample`] is the "natural pair" representation: a sentence plus an
//! ordered list of `(span, type)` annotations. Each annotation also records
//! which occurrence of its span it covers, so multi-occurring spans are
//! unambiguous. Occurrences are always counted at token boundaries (see
//! [`aligned_occurrences`]), which keeps the natural representation and the
//! BIO representation in lock-step.

mod bio;
mod dedup;
pub mod io;
mod task;
mod tokenize;
mod validate;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use bio::{from_bio, to_bio, BioError, EntityRun, Tag, TokenizedSample};
pub use dedup::{dedup, dedup_indices, normalize_whitespace, DedupReport};
pub use task::{EntityClass, TaskSpec, TaskSpecError};
pub use tokenize::{
    aligned_occurrences, detokenize, detokenize_with_offsets, is_punct, is_token_boundary,
    tokenize, tokenize_with_offsets,
};
pub use validate::{validate, RejectReason};

/// One `(span, type)` annotation inside a sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub span: String,
    #[serde(rename = "type")]
    pub class_name: String,
    /// 0-based index of the occurrence of `span` this annotation covers.
    #[serde(rename = "occurrence", default)]
    pub occurrence_index: usize,
}

impl Annotation {
    pub fn new(span: impl Into<String>, class_name: impl Into<String>) -> Self {
        Self {
            span: span.into(),
            class_name: class_name.into(),
            occurrence_index: 0,
        }
    }

    pub fn at(mut self, occurrence_index: usize) -> Self {
        self.occurrence_index = occurrence_index;
        self
    }
}

/// A sentence paired with its entity list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NerSample {
    pub sentence: String,
    #[serde(rename = "entities", default)]
    pub annotations: Vec<Annotation>,
}

impl NerSample {
    pub fn new(sentence: impl Into<String>, annotations: Vec<Annotation>) -> Self {
        Self {
            sentence: sentence.into(),
            annotations,
        }
    }

    /// A sample with no annotations.
    pub fn negative(sentence: impl Into<String>) -> Self {
        Self::new(sentence, Vec::new())
    }

    pub fn is_negative(&self) -> bool {
        self.annotations.is_empty()
    }

    /// Byte range of `ann` in this sample's sentence, if it resolves.
    pub fn resolve(&self, ann: &Annotation) -> Option<Range<usize>> {
        aligned_occurrences(&self.sentence, &ann.span)
            .get(ann.occurrence_index)
            .map(|&start| start..start + ann.span.len())
    }

    /// Byte ranges of every annotation, in annotation order.
    pub fn resolved_ranges(&self) -> Vec<Option<Range<usize>>> {
        self.annotations.iter().map(|a| self.resolve(a)).collect()
    }

    /// Lowercases the sentence and every span, keeping occurrence indices.
    pub fn to_lowercase(&self) -> NerSample {
        NerSample {
            sentence: self.sentence.to_lowercase(),
            annotations: self
                .annotations
                .iter()
                .map(|a| Annotation {
                    span: a.span.to_lowercase(),
                    class_name: a.class_name.clone(),
                    occurrence_index: a.occurrence_index,
                })
                .collect(),
        }
    }

    /// Sorts annotations by resolved offset and renumbers occurrence indices
    /// from their resolved positions. Unresolvable annotations keep their
    /// relative order at the end.
    pub fn sorted_by_offset(&self) -> NerSample {
        let mut keyed: Vec<(Option<usize>, usize, Annotation)> = self
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| (self.resolve(a).map(|r| r.start), i, a.clone()))
            .collect();
        keyed.sort_by_key(|(start, i, _)| (start.is_none(), start.unwrap_or(0), *i));
        NerSample {
            sentence: self.sentence.clone(),
            annotations: keyed.into_iter().map(|(_, _, a)| a).collect(),
        }
    }
}

pub(crate) fn ranges_overlap(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}
