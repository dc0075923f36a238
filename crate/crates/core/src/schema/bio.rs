use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{aligned_occurrences, detokenize_with_offsets, tokenize_with_offsets, Annotation, NerSample};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BioError {
    #[error("span {span:?} does not align to token boundaries")]
    SpanAlignment { span: String },
    #[error("annotation {span:?} (occurrence {occurrence}) not found in sentence")]
    SpanNotFound { span: String, occurrence: usize },
    #[error("annotation {span:?} overlaps an earlier annotation")]
    Overlap { span: String },
    #[error("malformed tag sequence at token {index}: {reason}")]
    MalformedTagSequence { index: usize, reason: String },
    #[error("token/tag count mismatch: {tokens} tokens, {tags} tags")]
    LengthMismatch { tokens: usize, tags: usize },
}

/// A single BIO tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(c) | Tag::Inside(c) => Some(c),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(c) => write!(f, "B-{c}"),
            Tag::Inside(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        match s.split_once('-') {
            Some(("B", c)) if !c.is_empty() => Ok(Tag::Begin(c.to_string())),
            Some(("I", c)) if !c.is_empty() => Ok(Tag::Inside(c.to_string())),
            _ => Err(format!("invalid BIO tag {s:?}")),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tokens with one BIO tag each.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

/// An entity run `(start_token, end_token_exclusive, class)`.
pub type EntityRun = (usize, usize, String);

impl TokenizedSample {
    /// Checks the length and I-tag continuity invariants.
    pub fn check(&self) -> Result<(), BioError> {
        if self.tokens.len() != self.tags.len() {
            return Err(BioError::LengthMismatch {
                tokens: self.tokens.len(),
                tags: self.tags.len(),
            });
        }
        let mut prev: Option<&str> = None;
        for (i, tag) in self.tags.iter().enumerate() {
            if let Tag::Inside(c) = tag {
                if prev != Some(c.as_str()) {
                    return Err(BioError::MalformedTagSequence {
                        index: i,
                        reason: format!("I-{c} does not continue an entity of the same class"),
                    });
                }
            }
            prev = tag.class();
        }
        Ok(())
    }

    /// Maximal entity runs, in token order.
    pub fn entities(&self) -> Result<Vec<EntityRun>, BioError> {
        self.check()?;
        let mut out: Vec<EntityRun> = Vec::new();
        for (i, tag) in self.tags.iter().enumerate() {
            match tag {
                Tag::Outside => {}
                Tag::Begin(c) => out.push((i, i + 1, c.clone())),
                Tag::Inside(_) => out.last_mut().expect("checked").1 = i + 1,
            }
        }
        Ok(out)
    }
}

/// Converts a validated sample to BIO form over [`super::tokenize`] tokens.
pub fn to_bio(sample: &NerSample) -> Result<TokenizedSample, BioError> {
    let offsets = tokenize_with_offsets(&sample.sentence);
    let tokens: Vec<String> = offsets.iter().map(|r| sample.sentence[r.clone()].to_string()).collect();
    let mut tags = vec![Tag::Outside; tokens.len()];
    for ann in &sample.annotations {
        let range = sample.resolve(ann).ok_or_else(|| BioError::SpanNotFound {
            span: ann.span.clone(),
            occurrence: ann.occurrence_index,
        })?;
        let first = offsets.iter().position(|t| t.start == range.start);
        let last = offsets.iter().position(|t| t.end == range.end);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(BioError::SpanAlignment {
                span: ann.span.clone(),
            });
        };
        if last < first {
            return Err(BioError::SpanAlignment {
                span: ann.span.clone(),
            });
        }
        if tags[first..=last].iter().any(|t| *t != Tag::Outside) {
            return Err(BioError::Overlap {
                span: ann.span.clone(),
            });
        }
        tags[first] = Tag::Begin(ann.class_name.clone());
        for tag in &mut tags[first + 1..=last] {
            *tag = Tag::Inside(ann.class_name.clone());
        }
    }
    Ok(TokenizedSample { tokens, tags })
}

/// Inverse of [`to_bio`]: the sentence is rebuilt with [`super::detokenize`].
pub fn from_bio(ts: &TokenizedSample) -> Result<NerSample, BioError> {
    let runs = ts.entities()?;
    let (sentence, ranges) = detokenize_with_offsets(&ts.tokens);
    let mut annotations = Vec::with_capacity(runs.len());
    for (first, end, class) in runs {
        let start = ranges[first].start;
        let stop = ranges[end - 1].end;
        let span = sentence[start..stop].to_string();
        let occurrence_index = aligned_occurrences(&sentence, &span)
            .iter()
            .position(|&s| s == start)
            .ok_or_else(|| BioError::SpanAlignment { span: span.clone() })?;
        annotations.push(Annotation {
            span,
            class_name: class,
            occurrence_index,
        });
    }
    Ok(NerSample {
        sentence,
        annotations,
    })
}
