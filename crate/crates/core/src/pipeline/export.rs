use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::io::{write_conll, write_jsonl};
use crate::schema::{to_bio, Annotation, NerSample, TokenizedSample};

/// Training files for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportFiles {
    pub conll: String,
    /// One weight per CoNLL block, in block order.
    pub weights: String,
    pub jsonl: String,
    /// Samples dropped because they could not be aligned to tokens.
    pub unaligned: usize,
    pub blocks: usize,
}

#[derive(Serialize)]
struct JsonEntity<'a> {
    span: &'a str,
    #[serde(rename = "type")]
    class: &'a str,
    occurrence: usize,
}

#[derive(Serialize)]
struct JsonSample<'a> {
    sentence: &'a str,
    entities: Vec<JsonEntity<'a>>,
}

impl<'a> From<&'a NerSample> for JsonSample<'a> {
    fn from(s: &'a NerSample) -> Self {
        Self {
            sentence: &s.sentence,
            entities: s
                .annotations
                .iter()
                .map(|a: &'a Annotation| JsonEntity {
                    span: &a.span,
                    class: &a.class_name,
                    occurrence: a.occurrence_index,
                })
                .collect(),
        }
    }
}

/// Demos `replication` times each, then every sample once. The weights
/// sidecar gives each sample block weight 1 and each demo block weight
/// `replication`, for trainers that prefer loss weighting over repetition;
/// such trainers should read only the first copy of each demo.
pub fn export_conll(dataset: &[NerSample], demos: &[NerSample], replication: usize) -> ExportFiles {
    let mut unaligned = 0;
    let mut align = |s: &NerSample| -> Option<TokenizedSample> {
        match to_bio(s) {
            Ok(t) if !t.tokens.is_empty() => Some(t),
            Ok(_) => {
                unaligned += 1;
                None
            }
            Err(e) => {
                log::warn!("dropping sample that does not align to tokens: {e}");
                unaligned += 1;
                None
            }
        }
    };
    let demo_blocks: Vec<TokenizedSample> = demos.iter().filter_map(&mut align).collect();
    let sample_blocks: Vec<TokenizedSample> = dataset.iter().filter_map(&mut align).collect();

    let mut blocks: Vec<&TokenizedSample> = Vec::new();
    let mut weights = String::new();
    for _ in 0..replication {
        for d in &demo_blocks {
            blocks.push(d);
            weights.push_str(&format!("{replication}\n"));
        }
    }
    for s in &sample_blocks {
        blocks.push(s);
        weights.push_str("1\n");
    }
    let json: Vec<JsonSample> = demos.iter().chain(dataset).map(JsonSample::from).collect();
    ExportFiles {
        conll: write_conll(blocks.iter().copied()),
        weights,
        jsonl: write_jsonl(&json),
        unaligned,
        blocks: blocks.len(),
    }
}

/// Sample counts through the filter chain plus export digests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    /// Raw sample blocks parsed from completions.
    pub generated: usize,
    pub valid: usize,
    pub deduped: usize,
    pub post_correction: usize,
    pub annotations_pre_correction: usize,
    pub annotations_post_correction: usize,
    /// Which stage's samples were exported.
    pub source: String,
    pub demos: usize,
    pub demo_replication: usize,
    pub conll_blocks: usize,
    pub unaligned_dropped: usize,
    /// File name -> sha256.
    pub digests: BTreeMap<String, String>,
}

impl ExportManifest {
    /// Counts never grow along the filter chain.
    pub fn is_monotone(&self) -> bool {
        self.valid <= self.generated
            && self.deduped <= self.valid
            && self.post_correction <= self.deduped
            && self.annotations_post_correction <= self.annotations_pre_correction
    }
}
