use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Annotation, NerSample};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub kept: usize,
    pub duplicates_removed: usize,
    pub conflicts_removed: usize,
}

/// Collapses runs of whitespace to a single space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes exact duplicates (keeping the first copy) and drops every sample
/// whose sentence appears with two or more distinct annotation lists.
/// Sentences are compared after whitespace normalization.
pub fn dedup(samples: &[NerSample]) -> (Vec<NerSample>, DedupReport) {
    let (keep, report) = dedup_indices(samples);
    (keep.into_iter().map(|i| samples[i].clone()).collect(), report)
}

/// Like [`dedup`], but returns the indices of the kept samples.
pub fn dedup_indices(samples: &[NerSample]) -> (Vec<usize>, DedupReport) {
    let keys: Vec<String> = samples.iter().map(|s| normalize_whitespace(&s.sentence)).collect();
    let mut variants: HashMap<&str, Vec<&[Annotation]>> = HashMap::new();
    for (key, s) in keys.iter().zip(samples) {
        let seen = variants.entry(key).or_default();
        if !seen.contains(&s.annotations.as_slice()) {
            seen.push(&s.annotations);
        }
    }
    let mut report = DedupReport::default();
    let mut emitted: HashMap<&str, ()> = HashMap::new();
    let mut keep = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        if variants[key.as_str()].len() > 1 {
            report.conflicts_removed += 1;
        } else if emitted.insert(key, ()).is_some() {
            report.duplicates_removed += 1;
        } else {
            report.kept += 1;
            keep.push(i);
        }
    }
    (keep, report)
}
