//! CoNLL and JSONL readers/writers.
//!
//! CoNLL: one `token<TAB>tag` line per token, a blank line between samples.
//! The reader also accepts whitespace-separated columns (tag last) and skips
//! `-DOCSTART-` lines. JSONL: one serialized value per line.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::{Tag, TokenizedSample};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {reason}")]
    Conll { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn write_conll<'a>(samples: impl IntoIterator<Item = &'a TokenizedSample>) -> String {
    let mut out = String::new();
    for (i, s) in samples.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
    }
    out
}

pub fn read_conll(text: &str) -> Result<Vec<TokenizedSample>, IoError> {
    let mut out = Vec::new();
    let mut cur = TokenizedSample {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    let flush = |cur: &mut TokenizedSample, out: &mut Vec<TokenizedSample>, line: usize| {
        if cur.tokens.is_empty() {
            return Ok(());
        }
        let sample = std::mem::replace(
            cur,
            TokenizedSample {
                tokens: Vec::new(),
                tags: Vec::new(),
            },
        );
        sample.check().map_err(|e| IoError::Conll {
            line,
            reason: e.to_string(),
        })?;
        out.push(sample);
        Ok(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() {
            flush(&mut cur, &mut out, line)?;
            continue;
        }
        if trimmed.starts_with("-DOCSTART-") {
            continue;
        }
        let (tok, tag) = if let Some((tok, rest)) = trimmed.split_once('\t') {
            (tok, rest.rsplit('\t').next().unwrap_or(rest))
        } else {
            let mut cols = trimmed.split_whitespace();
            let tok = cols.next().unwrap_or_default();
            (tok, cols.last().ok_or_else(|| IoError::Conll {
                line,
                reason: "missing tag column".into(),
            })?)
        };
        let tag: Tag = tag.trim().parse().map_err(|reason| IoError::Conll { line, reason })?;
        cur.tokens.push(tok.to_string());
        cur.tags.push(tag);
    }
    flush(&mut cur, &mut out, text.lines().count() + 1)?;
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| IoError::Json { line: i + 1, source }))
        .collect()
}
