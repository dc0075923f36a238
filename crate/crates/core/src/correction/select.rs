use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnnotationRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Records scoring strictly below this are candidates.
    pub threshold: f64,
    /// Largest fraction of each stratum that may be selected.
    pub cap_fraction: f64,
    /// Stratify by entity type; otherwise one global stratum.
    pub stratify_by_type: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            threshold: -2e-2,
            cap_fraction: 0.20,
            stratify_by_type: true,
        }
    }
}

impl SelectionParams {
    /// Largest selection allowed from a stratum of `size` records.
    pub fn cap(&self, size: usize) -> usize {
        // guard against 0.2 * 60 = 12.000000000000002
        ((self.cap_fraction * size as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Indices (into `records`) of the challenge set, ascending.
///
/// Per stratum: candidates score below the threshold; at most
/// [`SelectionParams::cap`] of them are kept, lowest scores first, ties by
/// `(sample_id, annotation_index)`.
pub fn select_for_correction(records: &[AnnotationRecord], params: &SelectionParams) -> Vec<usize> {
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = if params.stratify_by_type {
            r.annotation.class_name.as_str()
        } else {
            ""
        };
        strata.entry(key).or_default().push(i);
    }
    let mut selected = Vec::new();
    for members in strata.values() {
        let cap = params.cap(members.len());
        let mut candidates: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| records[i].score < params.threshold)
            .collect();
        candidates.sort_by(|&a, &b| {
            let (ra, rb) = (&records[a], &records[b]);
            ra.score
                .total_cmp(&rb.score)
                .then(ra.sample_id.cmp(&rb.sample_id))
                .then(ra.annotation_index.cmp(&rb.annotation_index))
        });
        candidates.truncate(cap);
        selected.extend(candidates);
    }
    selected.sort_unstable();
    selected
}

/// Groups selected records into single-class batches of at most
/// `batch_size`, classes in name order, records in target order.
pub fn plan_batches(records: &[AnnotationRecord], selected: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in selected {
        by_class.entry(records[i].annotation.class_name.as_str()).or_default().push(i);
    }
    let mut out = Vec::new();
    for mut members in by_class.into_values() {
        members.sort_by_key(|&i| records[i].target());
        out.extend(members.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Annotation;
    use proptest::prelude::*;

    fn rec(sample_id: usize, class: &str, score: f64) -> AnnotationRecord {
        AnnotationRecord {
            sample_id,
            annotation_index: 0,
            annotation: Annotation::new("x", class),
            token_logprobs: vec![score],
            score,
        }
    }

    #[test]
    fn nothing_below_threshold() {
        let rs: Vec<_> = (0..10).map(|i| rec(i, "person", -0.02 + i as f64 * 0.001)).collect();
        assert!(select_for_correction(&rs, &SelectionParams::default()).is_empty());
    }

    #[test]
    fn forty_candidates_capped_to_twenty_lowest() {
        let rs: Vec<_> = (0..100)
            .map(|i| rec(i, "person", if i < 40 { -1.0 - i as f64 } else { -0.001 }))
            .collect();
        let sel = select_for_correction(&rs, &SelectionParams::default());
        assert_eq!(sel, (20..40).collect::<Vec<_>>());
    }

    #[test]
    fn per_stratum_caps() {
        let mut rs: Vec<_> = (0..60).map(|i| rec(i, "person", -0.5)).collect();
        rs.extend((60..100).map(|i| rec(i, "location", -0.5)));
        let sel = select_for_correction(&rs, &SelectionParams::default());
        let person = sel.iter().filter(|&&i| rs[i].annotation.class_name == "person").count();
        assert_eq!((person, sel.len() - person), (12, 8));
        let global = SelectionParams {
            stratify_by_type: false,
            ..SelectionParams::default()
        };
        assert_eq!(select_for_correction(&rs, &global).len(), 20);
    }

    #[test]
    fn cap_rounds_up() {
        let p = SelectionParams::default();
        assert_eq!((p.cap(0), p.cap(1), p.cap(5), p.cap(6), p.cap(60)), (0, 1, 1, 2, 12));
    }

    #[test]
    fn batches_are_single_class() {
        let rs = vec![rec(0, "person", -1.0), rec(1, "location", -1.0), rec(2, "person", -1.0), rec(3, "person", -1.0), rec(4, "person", -1.0)];
        let b = plan_batches(&rs, &[0, 1, 2, 3, 4], 3);
        assert_eq!(b, vec![vec![1], vec![0, 2, 3], vec![4]]);
    }

    proptest! {
        #[test]
        fn lowering_threshold_never_grows_selection(
            scores in prop::collection::vec((-1.0f64..0.0, 0usize..3), 0..60),
            t1 in -0.5f64..0.0,
            dt in 0.0f64..0.5,
        ) {
            let classes = ["a", "b", "c"];
            let rs: Vec<_> = scores.iter().enumerate().map(|(i, &(s, c))| rec(i, classes[c], s)).collect();
            let hi = SelectionParams { threshold: t1, ..SelectionParams::default() };
            let lo = SelectionParams { threshold: t1 - dt, ..SelectionParams::default() };
            prop_assert!(select_for_correction(&rs, &lo).len() <= select_for_correction(&rs, &hi).len());
        }
    }
}
