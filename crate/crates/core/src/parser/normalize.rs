use std::collections::HashMap;

use crate::schema::{aligned_occurrences, ranges_overlap, Annotation, NerSample};

/// Builds a sample from raw `(span, type)` pairs.
///
/// - a span listed with several types keeps the first-listed type;
/// - every token-aligned occurrence of a listed span gets an annotation,
///   except occurrences nested in an occurrence of a longer listed span
///   (kept only if the span has no other occurrence, so validation reports
///   the overlap);
/// - spans that never occur keep one annotation, so validation reports them;
/// - annotations are ordered by offset, unresolvable ones last.
///
/// Idempotent: normalizing a normalized sample's pairs gives it back.
pub fn normalize(sentence: &str, raw: &[(String, String)]) -> NerSample {
    normalize_with_sources(sentence, raw).0
}

/// [`normalize`], also returning for each annotation the index of the raw
/// pair it came from.
pub fn normalize_with_sources(sentence: &str, raw: &[(String, String)]) -> (NerSample, Vec<usize>) {
    let mut first: HashMap<&str, usize> = HashMap::new();
    let mut distinct: Vec<usize> = Vec::new();
    for (i, (span, _)) in raw.iter().enumerate() {
        if !first.contains_key(span.as_str()) {
            first.insert(span, i);
            distinct.push(i);
        }
    }
    let occurrences: Vec<Vec<usize>> = distinct
        .iter()
        .map(|&i| aligned_occurrences(sentence, &raw[i].0))
        .collect();

    // (start or None, listing order, occurrence index, raw index)
    let mut keyed: Vec<(Option<usize>, usize, usize, usize)> = Vec::new();
    for (d, &i) in distinct.iter().enumerate() {
        let len = raw[i].0.len();
        if occurrences[d].is_empty() {
            keyed.push((None, d, 0, i));
            continue;
        }
        let nested = |start: usize| {
            distinct.iter().enumerate().any(|(e, &j)| {
                raw[j].0.len() > len
                    && occurrences[e]
                        .iter()
                        .any(|&s| ranges_overlap(&(s..s + raw[j].0.len()), &(start..start + len)))
            })
        };
        let free: Vec<usize> = (0..occurrences[d].len())
            .filter(|&k| !nested(occurrences[d][k]))
            .collect();
        let picked: Vec<usize> = if free.is_empty() {
            (0..occurrences[d].len()).collect()
        } else {
            free
        };
        for k in picked {
            keyed.push((Some(occurrences[d][k]), d, k, i));
        }
    }
    keyed.sort_by_key(|&(start, d, k, _)| (start.is_none(), start.unwrap_or(0), d, k));
    let annotations = keyed
        .iter()
        .map(|&(_, _, k, i)| Annotation::new(raw[i].0.clone(), raw[i].1.clone()).at(k))
        .collect();
    let sources = keyed.iter().map(|&(_, _, _, i)| i).collect();
    (NerSample::new(sentence, annotations), sources)
}
