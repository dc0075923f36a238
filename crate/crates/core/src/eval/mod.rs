//! Exact and partial micro precision/recall/F1 over BIO corpora.
//!
//! Partial mode credits a same-class prediction that overlaps a gold entity
//! without matching it exactly with half a true positive. Each gold entity
//! pairs with at most one prediction and vice versa: exact matches first,
//! then overlaps greedily from left to right.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{BioError, EntityRun, TokenizedSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpora differ in length: {pred} predicted vs {gold} gold sentences")]
    CorpusLength { pred: usize, gold: usize },
    #[error("sentence {index}: {pred} predicted vs {gold} gold tokens")]
    TokenCount { index: usize, pred: usize, gold: usize },
    #[error("sentence {index}: {source}")]
    Tags {
        index: usize,
        #[source]
        source: BioError,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    Exact,
    Partial,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Exact => "exact",
            MatchMode::Partial => "partial",
        })
    }
}

/// Match counts kept in half units so partial credit stays exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp_halves: u64,
    pub predicted: u64,
    pub gold: u64,
}

impl MatchCounts {
    pub fn tp(&self) -> f64 {
        self.tp_halves as f64 / 2.0
    }

    pub fn fp(&self) -> f64 {
        self.predicted as f64 - self.tp()
    }

    pub fn fn_(&self) -> f64 {
        self.gold as f64 - self.tp()
    }

    pub fn add(&mut self, other: &MatchCounts) {
        self.tp_halves += other.tp_halves;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> Scores {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / (2 * d) as f64 };
        let precision = ratio(self.tp_halves, self.predicted);
        let recall = ratio(self.tp_halves, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            precision,
            recall,
            f1,
            counts: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    #[serde(flatten)]
    pub micro: Scores,
    pub per_class: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.micro.f1
    }

    /// Plain-text table with a micro row and one row per class.
    pub fn to_text(&self) -> String {
        let mut out = format!("mode: {}\n{:<20} {:>9} {:>9} {:>9} {:>8} {:>8}\n", self.mode, "class", "precision", "recall", "f1", "pred", "gold");
        let mut row = |name: &str, s: &Scores| {
            out.push_str(&format!(
                "{:<20} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>8}\n",
                name, s.precision, s.recall, s.f1, s.counts.predicted, s.counts.gold
            ));
        };
        row("micro", &self.micro);
        for (c, s) in &self.per_class {
            row(c, s);
        }
        out
    }
}

fn overlaps(a: &EntityRun, b: &EntityRun) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Per-class counts for one sentence.
pub fn match_sentence(pred: &[EntityRun], gold: &[EntityRun], mode: MatchMode) -> BTreeMap<String, MatchCounts> {
    let mut out: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for p in pred {
        out.entry(p.2.clone()).or_default().predicted += 1;
    }
    for g in gold {
        out.entry(g.2.clone()).or_default().gold += 1;
    }
    let mut pred_used = vec![false; pred.len()];
    let mut gold_used = vec![false; gold.len()];
    for (i, p) in pred.iter().enumerate() {
        if let Some(j) = gold.iter().position(|g| g == p) {
            if !gold_used[j] {
                pred_used[i] = true;
                gold_used[j] = true;
                out.get_mut(&p.2).expect("counted").tp_halves += 2;
            }
        }
    }
    if mode == MatchMode::Partial {
        let mut pred_order: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
        pred_order.sort_by_key(|&i| (pred[i].0, pred[i].1));
        let mut gold_order: Vec<usize> = (0..gold.len()).filter(|&j| !gold_used[j]).collect();
        gold_order.sort_by_key(|&j| (gold[j].0, gold[j].1));
        for i in pred_order {
            let p = &pred[i];
            if let Some(&j) = gold_order
                .iter()
                .find(|&&j| !gold_used[j] && gold[j].2 == p.2 && overlaps(p, &gold[j]))
            {
                gold_used[j] = true;
                out.get_mut(&p.2).expect("counted").tp_halves += 1;
            }
        }
    }
    out
}

fn corpus_counts(
    pred: &[TokenizedSample],
    gold: &[TokenizedSample],
    mode: MatchMode,
) -> Result<BTreeMap<String, MatchCounts>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::CorpusLength {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut out: BTreeMap<String, MatchCounts> = BTreeMap::new();
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.tokens.len() != g.tokens.len() {
            return Err(EvalError::TokenCount {
                index,
                pred: p.tokens.len(),
                gold: g.tokens.len(),
            });
        }
        let pe = p.entities().map_err(|source| EvalError::Tags { index, source })?;
        let ge = g.entities().map_err(|source| EvalError::Tags { index, source })?;
        for (class, c) in match_sentence(&pe, &ge, mode) {
            out.entry(class).or_default().add(&c);
        }
    }
    Ok(out)
}

pub fn evaluate(pred: &[TokenizedSample], gold: &[TokenizedSample], mode: MatchMode) -> Result<EvalReport, EvalError> {
    let per = corpus_counts(pred, gold, mode)?;
    let mut micro = MatchCounts::default();
    per.values().for_each(|c| micro.add(c));
    Ok(EvalReport {
        mode,
        micro: micro.scores(),
        per_class: per.into_iter().map(|(k, c)| (k, c.scores())).collect(),
    })
}

pub fn exact_micro(pred: &[TokenizedSample], gold: &[TokenizedSample]) -> Result<EvalReport, EvalError> {
    evaluate(pred, gold, MatchMode::Exact)
}

pub fn partial_micro(pred: &[TokenizedSample], gold: &[TokenizedSample]) -> Result<EvalReport, EvalError> {
    evaluate(pred, gold, MatchMode::Partial)
}

pub fn per_class_breakdown(
    pred: &[TokenizedSample],
    gold: &[TokenizedSample],
    mode: MatchMode,
) -> Result<BTreeMap<String, Scores>, EvalError> {
    Ok(evaluate(pred, gold, mode)?.per_class)
}
