//! Offline stand-in for a chat model.
//!
//! Answers every prompt family with plausible, deterministic text derived
//! from the request's replay key and ordinal. Sample completions include a
//! share of malformed blocks and low-confidence annotations so every
//! downstream path gets exercised. Used to build fixtures and for dry runs.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::LazyLock;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{Backend, BackendCall, BackendError, CompletionResponse, TokenLogprob, Usage};
use crate::prompting::PromptKind;
use crate::schema::TaskSpec;

static CHUNK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*[^\s]+|\s+").unwrap());
static QUOTED_SENTENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"Sentence: "(.*)""#).unwrap());
static QUOTED_ENTITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"Named Entity: "(.*)""#).unwrap());

const PEOPLE: &[&str] = &[
    "Maria Lopez", "Kenji Watanabe", "Amara Okafor", "Lars Nilsson", "Priya Raman", "Tom Becker",
    "Elena Petrova", "Samuel Green", "Aisha Bello", "Jonas Weber", "Mei Chen", "Carlos Ruiz",
];
const PLACES: &[&str] = &[
    "Lisbon", "Nairobi", "New York", "Osaka", "Lima", "Oslo", "Cape Town", "Hanoi", "Quebec", "Porto",
    "San Diego", "Tbilisi",
];
const ORGS: &[&str] = &[
    "Northwind Bank", "Acme Motors", "Helix Labs", "the World Health Organization", "Bluebird Air",
    "Orion Media", "Greenfield University", "Vertex Energy", "Redwood Capital", "Atlas Shipping",
];
const ADJECTIVES: &[&str] = &[
    "local", "regional", "global", "technical", "casual", "formal", "urgent", "light", "seasonal",
    "historic", "modern", "rural", "urban", "academic", "popular", "niche",
];
const OPENERS: &[&str] = &["On Monday,", "Earlier today,", "According to reports,", "Last week,", ""];
const LINKS: &[&str] = &["met with", "visited", "praised", "spoke about", "and", "signed a deal with", "criticized"];
const CLOSERS: &[&str] = &[
    "on Tuesday.", "after a long delay.", "amid rising costs.", "during the summit.", "for the first time.",
];
const FILLER: &[&str] = &[
    "Markets were quiet on Friday.", "The weather stayed mild all week.", "Prices rose slightly in March.",
    "The meeting ended without a decision.",
];

/// Deterministic fake model over a task's entity classes.
pub struct SyntheticBackend {
    lexicon: BTreeMap<String, Vec<String>>,
    /// Probability that a sample block is malformed.
    pub malformed_rate: f64,
    /// Probability that an annotation gets low-confidence log-probs.
    pub uncertain_rate: f64,
}

fn class_lexicon(class: &str) -> Vec<String> {
    let lower = class.to_lowercase();
    let base: &[&str] = if lower.starts_with("per") {
        PEOPLE
    } else if lower.starts_with("loc") || lower.contains("place") || lower.contains("city") {
        PLACES
    } else if lower.starts_with("org") || lower.contains("company") {
        ORGS
    } else {
        &[]
    };
    if !base.is_empty() {
        return base.iter().map(|s| s.to_string()).collect();
    }
    let mut cap = class.to_string();
    if let Some(first) = cap.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    ["Alpha", "Nova", "Prime", "Delta", "Summit", "Echo", "Zenith", "Vale"]
        .iter()
        .map(|s| format!("{s} {cap}"))
        .collect()
}

impl SyntheticBackend {
    pub fn new(spec: &TaskSpec) -> Self {
        Self {
            lexicon: spec.classes.iter().map(|c| (c.name.clone(), class_lexicon(&c.name))).collect(),
            malformed_rate: 0.15,
            uncertain_rate: 0.3,
        }
    }

    fn rng(call: &BackendCall<'_>) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let key = hex::decode(call.key).unwrap_or_default();
        for (i, b) in key.iter().take(32).enumerate() {
            seed[i] = *b;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(call.ordinal as u64);
        rng
    }

    fn classes(&self) -> Vec<&str> {
        self.lexicon.keys().map(String::as_str).collect()
    }

    /// Returns the completion text and the byte ranges of uncertain items.
    fn samples(&self, rng: &mut ChaCha8Rng, count: usize) -> (String, Vec<Range<usize>>) {
        let classes = self.classes();
        let mut text = String::new();
        let mut uncertain = Vec::new();
        for i in 1..=count {
            if i > 1 {
                text.push_str("\n\n");
            }
            let n_ents = if classes.is_empty() { 0 } else { rng.random_range(0..=3usize) };
            let mut mentions: Vec<(String, String)> = Vec::new();
            for _ in 0..n_ents {
                let class = *classes.choose(rng).expect("non-empty");
                let name = self.lexicon[class].choose(rng).expect("lexicon").clone();
                if !mentions.iter().any(|(m, _)| *m == name) {
                    mentions.push((name, class.to_string()));
                }
            }
            let sentence = if mentions.is_empty() {
                FILLER.choose(rng).expect("filler").to_string()
            } else {
                let mut parts = vec![OPENERS.choose(rng).expect("opener").to_string()];
                for (k, (m, _)) in mentions.iter().enumerate() {
                    if k > 0 {
                        parts.push(LINKS.choose(rng).expect("link").to_string());
                    }
                    parts.push(m.clone());
                }
                if mentions.len() == 1 {
                    parts.push("said it would expand".to_string());
                }
                parts.push(CLOSERS.choose(rng).expect("closer").to_string());
                let s = parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ");
                let mut chars = s.chars();
                match chars.next() {
                    Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                    None => s,
                }
            };
            let mut items: Vec<(String, String)> = mentions.clone();
            let malformed = rng.random_bool(self.malformed_rate);
            let mut drop_list = false;
            if malformed {
                match rng.random_range(0..4u8) {
                    0 => items.push(("Atlantis".into(), "kingdom".into())),
                    1 => items.push(("Gotham City".into(), classes.first().copied().unwrap_or("x").into())),
                    2 => match mentions.iter().find(|(m, _)| m.contains(' ')) {
                        Some((m, c)) => items.push((m.rsplit(' ').next().expect("word").to_string(), c.clone())),
                        None => items.push(("Atlantis".into(), "kingdom".into())),
                    },
                    _ => drop_list = true,
                }
            }
            text.push_str(&format!("{i}. Sentence: \"{sentence}\"\n"));
            if drop_list {
                text.push_str("Entities are listed above.");
                continue;
            }
            text.push_str("Named Entities: [");
            for (k, (span, class)) in items.iter().enumerate() {
                if k > 0 {
                    text.push_str(", ");
                }
                let start = text.len();
                text.push_str(&format!("{span} ({class})"));
                if rng.random_bool(self.uncertain_rate) {
                    uncertain.push(start..text.len());
                }
            }
            text.push(']');
        }
        (text, uncertain)
    }

    fn numbered(items: &[String]) -> String {
        items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn corrections(&self, rng: &mut ChaCha8Rng, prompt: &str, n: usize) -> String {
        let sentences: Vec<&str> = QUOTED_SENTENCE.captures_iter(prompt).map(|c| c.get(1).expect("g").as_str()).collect();
        let spans: Vec<&str> = QUOTED_ENTITY.captures_iter(prompt).map(|c| c.get(1).expect("g").as_str()).collect();
        let classes = self.classes();
        let mut lines = Vec::new();
        for i in 0..n {
            let sentence = sentences.len().checked_sub(n - i).map(|k| sentences[k]).unwrap_or("");
            let span = spans.len().checked_sub(n - i).map(|k| spans[k]).unwrap_or("");
            let roll = rng.random_range(0..100u32);
            let answer = if roll < 40 {
                "Correct".to_string()
            } else if roll < 60 {
                let other: Vec<&str> = classes.iter().copied().chain(["other"]).collect();
                format!("Wrong Type: {}", other.choose(rng).expect("classes"))
            } else if roll < 75 {
                "Not a Named Entity".to_string()
            } else if roll < 90 {
                // widen to the next word when there is one, else shrink
                let widened = sentence.find(span).and_then(|at| {
                    let rest = &sentence[at + span.len()..];
                    let next = rest.split_whitespace().next()?;
                    Some(format!("{span} {}", next.trim_end_matches(['.', ','])))
                });
                match widened {
                    Some(w) => format!("Wrong Span: {w}"),
                    None => format!("Wrong Span: {}", span.split(' ').next().unwrap_or(span)),
                }
            } else {
                "Unsure, this depends on context".to_string()
            };
            lines.push(format!("{}. {answer}", i + 1));
        }
        lines.join("\n")
    }

    fn prediction(&self, rng: &mut ChaCha8Rng, prompt: &str) -> String {
        let sentence = QUOTED_SENTENCE
            .captures_iter(prompt)
            .last()
            .map(|c| c.get(1).expect("g").as_str().to_string())
            .unwrap_or_default();
        let mut items = Vec::new();
        for (class, names) in &self.lexicon {
            for name in names {
                if sentence.contains(name.as_str()) && rng.random_bool(0.9) {
                    items.push(format!("{name} ({class})"));
                }
            }
        }
        format!("Named Entities: [{}]", items.join(", "))
    }

    fn respond(&self, call: &BackendCall<'_>) -> (String, Vec<Range<usize>>) {
        let mut rng = Self::rng(call);
        let bundle = &call.request.bundle;
        let meta = &bundle.metadata;
        let count = meta.get("count").and_then(|v| v.as_u64()).unwrap_or(3) as usize;
        let prompt = bundle.text();
        match bundle.kind {
            PromptKind::SampleGen => self.samples(&mut rng, count),
            PromptKind::AttrDim => (
                "Important attributes include:\n1. Topic\n2. Writing style\n3. Location\n4. Length".into(),
                vec![],
            ),
            PromptKind::AttrValue => {
                let dim = meta.get("dimension").and_then(|v| v.as_str()).unwrap_or("value");
                let mut adj: Vec<&str> = ADJECTIVES.to_vec();
                let mut items = Vec::new();
                while items.len() < count {
                    let pick = if adj.is_empty() {
                        format!("{dim} variant {}", items.len() + 1)
                    } else {
                        let k = rng.random_range(0..adj.len());
                        format!("{} {dim}", adj.swap_remove(k))
                    };
                    items.push(pick);
                }
                (format!("Here are some options:\n{}", Self::numbered(&items)), vec![])
            }
            PromptKind::EntityPoolGen => {
                let class = meta.get("class").and_then(|v| v.as_str()).unwrap_or("");
                let mut names = self.lexicon.get(class).cloned().unwrap_or_else(|| class_lexicon(class));
                let mut items = Vec::new();
                while items.len() < count && !names.is_empty() {
                    let k = rng.random_range(0..names.len());
                    items.push(names.swap_remove(k));
                }
                (Self::numbered(&items), vec![])
            }
            PromptKind::Correction => {
                let n = meta.get("batch").and_then(|v| v.as_u64()).unwrap_or(1) as usize;
                (self.corrections(&mut rng, &prompt, n), vec![])
            }
            PromptKind::FewShotIcl => (self.prediction(&mut rng, &prompt), vec![]),
        }
    }
}

impl Backend for SyntheticBackend {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        let (text, uncertain) = self.respond(call);
        let mut rng = Self::rng(call);
        rng.set_word_pos(1 << 20);
        let mut token_logprobs = Vec::new();
        for m in CHUNK.find_iter(&text) {
            let low = uncertain.iter().any(|r| r.start < m.end() && m.start() < r.end);
            let logprob = if low {
                -rng.random_range(0.05..1.5)
            } else {
                -rng.random_range(0.0..0.004)
            };
            token_logprobs.push(TokenLogprob {
                token: m.as_str().to_string(),
                logprob,
            });
        }
        let prompt_words = call.request.bundle.text().split_whitespace().count() as u64;
        Ok(CompletionResponse {
            usage: Usage {
                prompt_tokens: prompt_words * 4 / 3,
                completion_tokens: token_logprobs.len() as u64,
            },
            text,
            token_logprobs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CompletionRequest, GenKind, Gateway, PriceTable};
    use crate::parser::{count_blocks, parse_generation};
    use crate::prompting::{build_sample_prompt, TemplateSet};
    use crate::schema::{EntityClass, NerSample, Annotation};

    fn spec() -> TaskSpec {
        let mut s = TaskSpec::new("news", vec![EntityClass::new("person"), EntityClass::new("location"), EntityClass::new("organization")]);
        s.demos = vec![NerSample::new("Bob is born in Athens.", vec![Annotation::new("Bob", "person"), Annotation::new("Athens", "location")])];
        s
    }

    #[test]
    fn deterministic_and_parseable() {
        let s = spec();
        let bundle = build_sample_prompt(&TemplateSet::default(), &s, "", 40).unwrap();
        let run = || {
            let gw = Gateway::new(SyntheticBackend::new(&s), PriceTable::default());
            gw.complete(CompletionRequest::new(bundle.clone(), GenKind::Ner, "gpt-3.5-turbo")).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(count_blocks(&a.text), 40);
        let out = parse_generation(&a.text, &s);
        assert_eq!(out.samples.len() + out.rejects.len(), 40);
        assert!(!out.rejects.is_empty() && out.samples.len() > 20);
        assert_eq!(a.token_logprobs.iter().map(|t| t.token.as_str()).collect::<String>(), a.text);
        assert!(a.token_logprobs.iter().any(|t| t.logprob < -0.05));
    }
}
