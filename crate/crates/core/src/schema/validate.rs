use serde::{Deserialize, Serialize};

use super::{ranges_overlap, NerSample, TaskSpec};

/// Why a generated sample was dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Unparseable,
    OverlappingSpans,
    UnseenType,
    SpanNotFound,
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RejectReason::Unparseable => "unparseable",
            RejectReason::OverlappingSpans => "overlapping_spans",
            RejectReason::UnseenType => "unseen_type",
            RejectReason::SpanNotFound => "span_not_found",
        })
    }
}

/// Checks a sample against the task's classes.
///
/// Reasons are reported in priority order: overlapping resolved spans, then
/// unseen entity types, then spans that do not resolve in the sentence.
pub fn validate(sample: &NerSample, spec: &TaskSpec) -> Result<(), RejectReason> {
    let ranges = sample.resolved_ranges();
    let resolved: Vec<_> = ranges.iter().flatten().collect();
    for (i, a) in resolved.iter().enumerate() {
        if resolved[i + 1..].iter().any(|b| ranges_overlap(a, b)) {
            return Err(RejectReason::OverlappingSpans);
        }
    }
    if sample.annotations.iter().any(|a| !spec.has_class(&a.class_name)) {
        return Err(RejectReason::UnseenType);
    }
    if ranges.iter().any(Option::is_none) {
        return Err(RejectReason::SpanNotFound);
    }
    Ok(())
}
