//! Structured extraction from free-form completions.
//!
//! Sample completions use the natural-pair format:
//!
//! ```text
//! 1. Sentence: "Bob is born in Athens."
//! Named Entities: [Bob (person), Athens (location)]
//! ```
//!
//! Grammar, line oriented:
//!
//! - a block starts at a `Sentence:` line, optionally numbered (`1.`, `1)`)
//!   or wrapped in `**`; the sentence may be quoted;
//! - the first `Named Entities:` line inside the block must hold one
//!   bracketed list of `span (type)` items separated by commas;
//! - code-fence lines are ignored; any other line is ignored.
//!
//! A block that does not fit is rejected as [`RejectReason::Unparseable`];
//! one that parses but fails validation gets the validator's reason.

mod corrections;
mod entity_list;
mod normalize;

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use corrections::parse_correction_response;
pub use entity_list::{parse_entity_list, EntityList};
pub use normalize::{normalize, normalize_with_sources};

use crate::schema::{ranges_overlap, validate, NerSample, RejectReason, TaskSpec};

static SENTENCE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:\d+\s*[.):]\s*)?(?:\*\*)?sentence(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$").unwrap()
});
static ENTITIES_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:\d+\s*[.):]\s*)?(?:\*\*)?named entities(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*?)\s*$").unwrap()
});
static ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(.+?)\s*\(([^()]*)\)\s*(?:,|$)").unwrap());

/// One `span (type)` item as written by the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawItem {
    pub span: String,
    pub label: String,
    /// Byte range of the whole `span (type)` text in the completion.
    pub range: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub raw_block: String,
    pub reason: RejectReason,
}

/// Parsed samples and rejected blocks; together they cover every block.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub samples: Vec<NerSample>,
    pub rejects: Vec<Reject>,
}

/// A parsed sample together with the completion range of the item each
/// annotation came from (duplicated annotations share their item's range).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSample {
    pub sample: NerSample,
    pub item_ranges: Vec<Range<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DetailedOutcome {
    pub samples: Vec<ParsedSample>,
    pub rejects: Vec<Reject>,
}

impl DetailedOutcome {
    pub fn into_outcome(self) -> ParseOutcome {
        ParseOutcome {
            samples: self.samples.into_iter().map(|p| p.sample).collect(),
            rejects: self.rejects,
        }
    }
}

/// Renders a sample in natural-pair format, optionally numbered.
pub fn render_natural_pair(sample: &NerSample, index: Option<usize>) -> String {
    let items: Vec<String> = sample
        .annotations
        .iter()
        .map(|a| format!("{} ({})", a.span, a.class_name))
        .collect();
    let prefix = index.map(|i| format!("{i}. ")).unwrap_or_default();
    format!("{prefix}Sentence: \"{}\"\nNamed Entities: [{}]", sample.sentence, items.join(", "))
}

struct Line<'a> {
    offset: usize,
    text: &'a str,
}

fn lines_with_offsets(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for piece in text.split_inclusive('\n') {
        let body = piece.strip_suffix('\n').unwrap_or(piece);
        let body = body.strip_suffix('\r').unwrap_or(body);
        out.push(Line { offset, text: body });
        offset += piece.len();
    }
    out
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Strips one pair of matching surrounding quotes.
pub(crate) fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('“', '”'), ('\'', '\''), ('`', '`')] {
        if s.len() >= open.len_utf8() + close.len_utf8() && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Number of sample blocks (`Sentence:` lines) in a completion, valid or not.
pub fn count_blocks(text: &str) -> usize {
    lines_with_offsets(text)
        .iter()
        .filter(|l| !is_fence(l.text) && SENTENCE_LINE.is_match(l.text))
        .count()
}

/// Parses the items of a bracketed list body located at `base` in the
/// completion. `None` when the body does not fit the item grammar.
pub(crate) fn parse_items(body: &str, base: usize) -> Option<Vec<RawItem>> {
    let mut items = Vec::new();
    let mut pos = 0;
    while !body[pos..].trim().is_empty() {
        let caps = ITEM.captures(&body[pos..])?;
        let span_m = caps.get(1).expect("group");
        let label_m = caps.get(2).expect("group");
        let span = strip_quotes(span_m.as_str());
        if span.is_empty() {
            return None;
        }
        let close = pos + label_m.end() + 1;
        items.push(RawItem {
            span: span.to_string(),
            label: label_m.as_str().trim().to_string(),
            range: base + pos + span_m.start()..base + close,
        });
        pos += caps.get(0).expect("match").end();
    }
    Some(items)
}

/// Extracts the `[...]` body from a `Named Entities:` payload.
fn bracket_body(payload: &str) -> Option<(usize, &str)> {
    let payload = payload.trim_end_matches('.');
    let start = payload.find('[')?;
    if !payload[..start].trim().is_empty() || !payload.ends_with(']') {
        return None;
    }
    let body = &payload[start + 1..payload.len() - 1];
    Some((start + 1, body))
}

struct RawBlock {
    raw: String,
    parsed: Option<(String, Vec<RawItem>)>,
}

fn split_blocks(text: &str) -> Vec<RawBlock> {
    let lines = lines_with_offsets(text);
    let starts: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !is_fence(l.text) && SENTENCE_LINE.is_match(l.text))
        .map(|(i, _)| i)
        .collect();
    let mut blocks = Vec::with_capacity(starts.len());
    for (n, &first) in starts.iter().enumerate() {
        let end = starts.get(n + 1).copied().unwrap_or(lines.len());
        let block_lines = &lines[first..end];
        let raw = block_lines
            .iter()
            .filter(|l| !is_fence(l.text))
            .map(|l| l.text)
            .collect::<Vec<_>>()
            .join("\n")
            .trim_end()
            .to_string();
        let sentence = SENTENCE_LINE
            .captures(block_lines[0].text)
            .and_then(|c| c.get(1))
            .map(|m| strip_quotes(m.as_str()).to_string())
            .filter(|s| !s.is_empty());
        let items = block_lines[1..]
            .iter()
            .filter(|l| !is_fence(l.text))
            .find_map(|l| ENTITIES_LINE.captures(l.text).map(|c| (l.offset, c)))
            .and_then(|(offset, caps)| {
                let m = caps.get(1).expect("group");
                let (rel, body) = bracket_body(m.as_str())?;
                parse_items(body, offset + m.start() + rel)
            });
        blocks.push(RawBlock {
            raw,
            parsed: sentence.zip(items),
        });
    }
    blocks
}

/// Parses a sample-generation completion into validated samples and
/// rejected blocks. Type labels are matched to spec classes ignoring case;
/// when the task asks for lowercase outputs, sentence and spans are
/// lowercased before normalization and validation.
pub fn parse_generation(text: &str, spec: &TaskSpec) -> ParseOutcome {
    parse_generation_detailed(text, spec).into_outcome()
}

pub fn parse_generation_detailed(text: &str, spec: &TaskSpec) -> DetailedOutcome {
    let mut out = DetailedOutcome::default();
    for block in split_blocks(text) {
        let Some((sentence, items)) = block.parsed else {
            out.rejects.push(Reject {
                raw_block: block.raw,
                reason: RejectReason::Unparseable,
            });
            continue;
        };
        let lower = spec.lowercase_outputs;
        let sentence = if lower { sentence.to_lowercase() } else { sentence };
        let raw: Vec<(String, String)> = items
            .iter()
            .map(|it| {
                let span = if lower { it.span.to_lowercase() } else { it.span.clone() };
                let class = spec.canonical_class(&it.label).map_or_else(|| it.label.clone(), str::to_string);
                (span, class)
            })
            .collect();
        let (sample, sources) = normalize_with_sources(&sentence, &raw);
        match validate(&sample, spec) {
            Ok(()) => out.samples.push(ParsedSample {
                item_ranges: sources.iter().map(|&i| items[i].range.clone()).collect(),
                sample,
            }),
            Err(reason) => out.rejects.push(Reject {
                raw_block: block.raw,
                reason,
            }),
        }
    }
    out
}

/// Parses a few-shot prediction for a known sentence. Malformed
/// annotations are dropped one by one instead of discarding the sample;
/// returns the cleaned sample and the number of annotations dropped.
pub fn parse_prediction(text: &str, sentence: &str, spec: &TaskSpec) -> (NerSample, usize) {
    let items = lines_with_offsets(text)
        .iter()
        .filter(|l| !is_fence(l.text))
        .find_map(|l| {
            let payload = ENTITIES_LINE
                .captures(l.text)
                .and_then(|c| c.get(1))
                .map(|m| m.as_str())
                .or_else(|| l.text.trim_start().starts_with('[').then_some(l.text.trim()))?;
            let (_, body) = bracket_body(payload)?;
            parse_items(body, 0)
        })
        .unwrap_or_default();
    let lower = spec.lowercase_outputs;
    let sentence = if lower { sentence.to_lowercase() } else { sentence.to_string() };
    let mut dropped = 0;
    let raw: Vec<(String, String)> = items
        .iter()
        .filter_map(|it| match spec.canonical_class(&it.label) {
            Some(c) => Some((if lower { it.span.to_lowercase() } else { it.span.clone() }, c.to_string())),
            None => {
                dropped += 1;
                None
            }
        })
        .collect();
    let sample = normalize(&sentence, &raw);
    let mut kept: Vec<(Range<usize>, crate::schema::Annotation)> = Vec::new();
    for ann in sample.annotations {
        let Some(range) = NerSample::new(sentence.as_str(), vec![]).resolve(&ann) else {
            dropped += 1;
            continue;
        };
        if kept.iter().any(|(r, _)| ranges_overlap(r, &range)) {
            dropped += 1;
            continue;
        }
        kept.push((range, ann));
    }
    (
        NerSample::new(sentence, kept.into_iter().map(|(_, a)| a).collect()),
        dropped,
    )
}
