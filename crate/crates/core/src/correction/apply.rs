use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{CorrectionAction, CorrectionDirective};
use crate::schema::{aligned_occurrences, ranges_overlap, validate, Annotation, NerSample, TaskSpec};

/// Outcome counts of one correction round. `na` covers drops and
/// retypes to "other".
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub prompted: usize,
    pub na: usize,
    pub span: usize,
    #[serde(rename = "type")]
    pub type_: usize,
    pub keep: usize,
    pub invalid: usize,
}

impl CorrectionStats {
    pub fn corrected(&self) -> usize {
        self.na + self.span + self.type_
    }

    pub fn corrected_fraction(&self) -> f64 {
        if self.prompted == 0 {
            0.0
        } else {
            self.corrected() as f64 / self.prompted as f64
        }
    }
}

enum Outcome {
    Keep,
    Invalid,
    Na,
    Span,
    Type,
}

struct Slot {
    ann: Annotation,
    range: Range<usize>,
}

fn revise_span(sentence: &str, slots: &[Option<Slot>], idx: usize, new_span: &str) -> Option<Slot> {
    let current = slots[idx].as_ref()?;
    let candidates = [new_span, new_span.trim_end_matches('.')];
    for span in candidates.iter().filter(|s| !s.is_empty()) {
        let starts = aligned_occurrences(sentence, span);
        let ranges: Vec<Range<usize>> = starts.iter().map(|&s| s..s + span.len()).collect();
        let free = |r: &Range<usize>| {
            slots
                .iter()
                .enumerate()
                .all(|(j, o)| j == idx || o.as_ref().is_none_or(|o| !ranges_overlap(&o.range, r)))
        };
        let pick = ranges
            .iter()
            .position(|r| ranges_overlap(r, &current.range) && free(r))
            .or_else(|| ranges.iter().position(free));
        if let Some(k) = pick {
            return Some(Slot {
                ann: Annotation::new(*span, current.ann.class_name.clone()).at(k),
                range: ranges[k].clone(),
            });
        }
    }
    None
}

/// Applies directives to a validated dataset.
///
/// Targets refer to annotation indices of the input dataset. The first
/// directive for a target wins; later ones, malformed ones and ones that
/// cannot be applied are counted invalid and change nothing. Annotations
/// are re-sorted by offset with occurrence indices recomputed; spans are
/// never re-expanded, so the annotation count cannot grow.
pub fn apply_directives(
    dataset: Vec<NerSample>,
    directives: &[CorrectionDirective],
    spec: &TaskSpec,
) -> (Vec<NerSample>, CorrectionStats) {
    let mut stats = CorrectionStats {
        prompted: directives.len(),
        ..CorrectionStats::default()
    };
    let mut slots: Vec<Vec<Option<Slot>>> = dataset
        .iter()
        .map(|s| {
            s.annotations
                .iter()
                .map(|a| s.resolve(a).map(|range| Slot { ann: a.clone(), range }))
                .collect()
        })
        .collect();
    let mut seen = HashSet::new();
    for d in directives {
        let (sid, aid) = (d.target.sample_id, d.target.annotation);
        let live = slots.get(sid).and_then(|s| s.get(aid)).is_some_and(Option::is_some);
        let outcome = if d.invalid || !live || !seen.insert(d.target) {
            Outcome::Invalid
        } else {
            let slot = slots[sid][aid].as_ref().expect("live");
            match &d.action {
                CorrectionAction::Keep => Outcome::Keep,
                CorrectionAction::Drop => Outcome::Na,
                CorrectionAction::ReviseType(t) if t.trim().eq_ignore_ascii_case("other") => Outcome::Na,
                CorrectionAction::ReviseType(t) => match spec.canonical_class(t) {
                    Some(c) if c == slot.ann.class_name => Outcome::Keep,
                    Some(_) => Outcome::Type,
                    None => Outcome::Invalid,
                },
                CorrectionAction::ReviseSpan(s) if *s == slot.ann.span => Outcome::Keep,
                CorrectionAction::ReviseSpan(s) => {
                    match revise_span(&dataset[sid].sentence, &slots[sid], aid, s) {
                        Some(new) if new.range == slot.range => Outcome::Keep,
                        Some(new) => {
                            slots[sid][aid] = Some(new);
                            Outcome::Span
                        }
                        None => Outcome::Invalid,
                    }
                }
            }
        };
        match outcome {
            Outcome::Keep => stats.keep += 1,
            Outcome::Invalid => stats.invalid += 1,
            Outcome::Na => {
                slots[sid][aid] = None;
                stats.na += 1;
            }
            Outcome::Span => stats.span += 1,
            Outcome::Type => {
                let CorrectionAction::ReviseType(t) = &d.action else { unreachable!() };
                let class = spec.canonical_class(t).expect("checked").to_string();
                slots[sid][aid].as_mut().expect("live").ann.class_name = class;
                stats.type_ += 1;
            }
        }
    }

    let out = dataset
        .into_iter()
        .zip(slots)
        .map(|(original, slots)| {
            let mut kept: Vec<Slot> = slots.into_iter().flatten().collect();
            kept.sort_by_key(|s| s.range.start);
            let annotations = kept
                .into_iter()
                .map(|s| {
                    let k = aligned_occurrences(&original.sentence, &s.ann.span)
                        .iter()
                        .position(|&st| st == s.range.start)
                        .expect("slot range comes from an aligned occurrence");
                    s.ann.at(k)
                })
                .collect();
            let revised = NerSample::new(original.sentence.clone(), annotations);
            if validate(&revised, spec).is_ok() || validate(&original, spec).is_err() {
                revised
            } else {
                original
            }
        })
        .collect();
    (out, stats)
}
