use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Dollars, Usage};

/// What a request generated; the cost report groups by this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    AttrDim,
    AttrVal,
    Entity,
    Ner,
    Correction,
    Prediction,
}

impl GenKind {
    pub const ALL: [GenKind; 6] = [
        GenKind::AttrDim,
        GenKind::AttrVal,
        GenKind::Entity,
        GenKind::Ner,
        GenKind::Correction,
        GenKind::Prediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GenKind::AttrDim => "attr-dim",
            GenKind::AttrVal => "attr-val",
            GenKind::Entity => "entity",
            GenKind::Ner => "ner",
            GenKind::Correction => "correction",
            GenKind::Prediction => "prediction",
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub request_index: u64,
    pub kind: GenKind,
    pub model_id: String,
    pub usage: Usage,
    pub dollars: Dollars,
    pub attempts: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<LedgerEntry>,
}

/// Tokens and dollars for one generation kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindTotal {
    pub requests: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollars: Dollars,
}

impl CostLedger {
    pub fn push(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: &CostLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn total(&self) -> Dollars {
        self.entries.iter().map(|e| e.dollars).sum()
    }

    /// Totals for every kind, zero rows included.
    pub fn totals_by_kind(&self) -> BTreeMap<GenKind, KindTotal> {
        let mut out: BTreeMap<GenKind, KindTotal> = GenKind::ALL.iter().map(|&k| (k, KindTotal::default())).collect();
        for e in &self.entries {
            let t = out.get_mut(&e.kind).expect("all kinds present");
            t.requests += 1;
            t.prompt_tokens += e.usage.prompt_tokens;
            t.completion_tokens += e.usage.completion_tokens;
            t.dollars += e.dollars;
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    /// Plain-text table: one row per kind plus a total row.
    pub fn report(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>14} {:>18} {:>14}\n",
            "kind", "requests", "prompt_tokens", "completion_tokens", "dollars"
        );
        let totals = self.totals_by_kind();
        for (kind, t) in &totals {
            out.push_str(&format!(
                "{:<12} {:>9} {:>14} {:>18} {:>14}\n",
                kind.as_str(),
                t.requests,
                t.prompt_tokens,
                t.completion_tokens,
                t.dollars.to_string()
            ));
        }
        let all = totals.values().fold(KindTotal::default(), |a, t| KindTotal {
            requests: a.requests + t.requests,
            prompt_tokens: a.prompt_tokens + t.prompt_tokens,
            completion_tokens: a.completion_tokens + t.completion_tokens,
            dollars: a.dollars + t.dollars,
        });
        out.push_str(&format!(
            "{:<12} {:>9} {:>14} {:>18} {:>14}\n",
            "total",
            all.requests,
            all.prompt_tokens,
            all.completion_tokens,
            all.dollars.to_string()
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{charge, PriceTable};

    fn entry(i: u64, kind: GenKind, dollars: &str) -> LedgerEntry {
        LedgerEntry {
            request_index: i,
            kind,
            model_id: "gpt-3.5-turbo".into(),
            usage: Usage::default(),
            dollars: dollars.parse().unwrap(),
            attempts: 1,
        }
    }

    #[test]
    fn empty_ledger_is_all_zero() {
        let l = CostLedger::default();
        assert_eq!(l.total(), Dollars::ZERO);
        assert!(l.totals_by_kind().values().all(|t| t.dollars == Dollars::ZERO && t.requests == 0));
        assert_eq!(l.totals_by_kind().len(), 6);
    }

    #[test]
    fn stage_totals_sum_to_grand_total() {
        let l = CostLedger {
            entries: vec![
                entry(0, GenKind::AttrDim, "0.01"),
                entry(1, GenKind::AttrVal, "0.04"),
                entry(2, GenKind::Ner, "0.3"),
                entry(3, GenKind::Ner, "0.15"),
                entry(4, GenKind::Correction, "0.07"),
            ],
        };
        let by_kind = l.totals_by_kind();
        assert_eq!(l.total(), "0.57".parse().unwrap());
        assert_eq!(by_kind.values().map(|t| t.dollars).sum::<Dollars>(), l.total());
        assert_eq!(by_kind[&GenKind::Ner].dollars, "0.45".parse().unwrap());
        assert!(l.report().lines().last().unwrap().ends_with("$0.57"));
    }

    #[test]
    fn single_entry_equals_charge() {
        let usage = Usage {
            prompt_tokens: 1234,
            completion_tokens: 567,
        };
        let d = charge(&usage, "gpt-4", &PriceTable::default()).unwrap();
        let l = CostLedger {
            entries: vec![LedgerEntry {
                usage,
                dollars: d,
                ..entry(0, GenKind::Entity, "0")
            }],
        };
        assert_eq!(l.total(), d);
        assert_eq!(CostLedger::from_jsonl(&l.to_jsonl()).unwrap(), l);
    }
}
