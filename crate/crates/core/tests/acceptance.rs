//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! Built without the libtest harness so the result lines always reach the
//! output of `cargo test`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use nersynth_core::correction::{apply_directives, select_for_correction, CorrectionAction, DirectiveTarget};
use nersynth_core::diversity::{sample_config_x, sample_entities_traced, AttributeDimension, AttributePool};
use nersynth_core::eval::{evaluate, MatchMode};
use nersynth_core::gateway::{charge, GenKind, LedgerEntry, Usage};
use nersynth_core::parser::parse_generation;
use nersynth_core::pipeline::{PipelineConfig, Runner, Stage};
use nersynth_core::schema::{
    aligned_occurrences, detokenize_with_offsets, from_bio, to_bio, validate, EntityClass, RejectReason, Tag,
};
use nersynth_core::{
    Annotation, AnnotationRecord, CorrectionDirective, CorrectionStats, CostLedger, Dollars, NerSample,
    PriceTable, SelectionParams, TaskSpec, TokenizedSample,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn news_spec() -> TaskSpec {
    let mut s = TaskSpec::new(
        "news articles",
        vec![EntityClass::new("person"), EntityClass::new("location"), EntityClass::new("organization")],
    );
    s.demos = vec![NerSample::new(
        "Bob is born in Athens.",
        vec![Annotation::new("Bob", "person"), Annotation::new("Athens", "location")],
    )];
    s
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

// ---------------------------------------------------------------- BIO

const WORDS: &[&str] = &[
    "Bob", "Athens", "river", "crossed", "New", "York", "the", "a", "Zoë", "Straße", "42", "x7", "München", "data",
];
const PUNCT: &[&str] = &[".", ",", "!", "?", "(", ")", "-", "'", "$", "%", "\"", ":", "€"];

fn random_sample(rng: &mut ChaCha8Rng) -> NerSample {
    let n = rng.random_range(1..=16);
    let tokens: Vec<String> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                PUNCT.choose(rng).unwrap().to_string()
            } else {
                WORDS.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    let (sentence, offsets) = detokenize_with_offsets(&tokens);
    let mut annotations = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.random_bool(0.3) {
            let len = rng.random_range(1..=3).min(n - i);
            let range = offsets[i].start..offsets[i + len - 1].end;
            let span = sentence[range.clone()].to_string();
            let occ = aligned_occurrences(&sentence, &span)
                .iter()
                .position(|&s| s == range.start)
                .expect("token-aligned span");
            let class = ["person", "location", "organization"].choose(rng).unwrap();
            annotations.push(Annotation::new(span, *class).at(occ));
            i += len;
        } else {
            i += 1;
        }
    }
    NerSample::new(sentence, annotations)
}

fn bio_round_trip() -> Check {
    let start = Instant::now();
    let bob = NerSample::new(
        "Bob is born in Athens.",
        vec![Annotation::new("Bob", "person"), Annotation::new("Athens", "location")],
    );
    let tags: Vec<String> = to_bio(&bob).map_err(|e| e.to_string())?.tags.iter().map(Tag::to_string).collect();
    ensure!(
        tags == ["B-person", "O", "O", "O", "B-location", "O"],
        "Bob/Athens tags were {tags:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..10_000 {
        let s = random_sample(&mut rng);
        let back = to_bio(&s).and_then(|t| from_bio(&t)).map_err(|e| format!("sample {k} {s:?}: {e}"))?;
        ensure!(back == s, "sample {k}: {s:?} came back as {back:?}");
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("10000 samples round-tripped, Bob/Athens tags exact, {took:.2?}"))
}

// ---------------------------------------------------------------- parser

#[derive(Deserialize)]
struct TaxonomyFile {
    case: Vec<TaxonomyCase>,
}

#[derive(Deserialize)]
struct TaxonomyCase {
    name: String,
    expect: String,
    completion: String,
}

const ENTITY_WORDS: &[&str] = &[
    "Alder", "Birch", "Cedar", "Dogwood", "Elm", "Fir", "Ginkgo", "Hazel", "Ivy", "Juniper", "Kapok", "Larch", "Maple",
    "Nutmeg", "Oak", "Pine", "Quince", "Rowan", "Spruce", "Teak", "Umbra", "Vine", "Willow", "Yew", "Zelkova",
];
const FILLER: &[&str] = &["met", "near", "and", "with", "visited", "before", "during", "quietly", "again"];

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Injected {
    Valid,
    Reject(RejectReason),
}

fn fuzz_block(rng: &mut ChaCha8Rng, index: usize) -> (String, Injected) {
    let classes = ["person", "location", "organization"];
    let mut words: Vec<&str> = ENTITY_WORDS.to_vec();
    words.shuffle(rng);
    let n_ents = rng.random_range(0..=3);
    let mut ents: Vec<(String, &str)> = Vec::new();
    for k in 0..n_ents {
        let len = rng.random_range(1..=2);
        let span = words[k * 2..k * 2 + len].join(" ");
        ents.push((span, classes.choose(rng).unwrap()));
    }
    let mut parts: Vec<String> = vec!["Today".into()];
    for (span, _) in &ents {
        parts.push(FILLER.choose(rng).unwrap().to_string());
        parts.push(span.clone());
    }
    parts.push("said".into());
    let sentence = parts.join(" ") + ".";

    let mut items: Vec<String> = ents.iter().map(|(s, c)| format!("{s} ({c})")).collect();
    let roll = rng.random_range(0..6);
    let mut kind = Injected::Valid;
    let mut entities_line = true;
    let mut quoted = true;
    match roll {
        1 if !items.is_empty() => {
            let last = items.len() - 1;
            items[last] = format!("{} (event)", ents[last].0);
            kind = Injected::Reject(RejectReason::UnseenType);
        }
        2 => {
            items.push("Xylem Qat (person)".into());
            kind = Injected::Reject(RejectReason::SpanNotFound);
        }
        3 => match ents.iter().find(|(s, _)| s.contains(' ')) {
            Some((s, c)) => {
                items.push(format!("{} ({c})", s.split(' ').nth(1).unwrap()));
                kind = Injected::Reject(RejectReason::OverlappingSpans);
            }
            None => {
                items.push("Quasar (location)".into());
                kind = Injected::Reject(RejectReason::SpanNotFound);
            }
        },
        4 => {
            match rng.random_range(0..3) {
                0 => entities_line = false,
                1 => items = vec!["none".into()],
                _ => quoted = false,
            }
            kind = Injected::Reject(RejectReason::Unparseable);
        }
        _ => {}
    }
    let sentence_line = if quoted {
        format!("{index}. Sentence: \"{sentence}\"")
    } else {
        format!("{index}. Sentence: \"\"")
    };
    let mut block = sentence_line;
    if entities_line {
        block.push_str(&format!("\nNamed Entities: [{}]", items.join(", ")));
    }
    (block, kind)
}

fn parser_taxonomy() -> Check {
    let spec = news_spec();
    let text = std::fs::read_to_string(fixtures().join("parser_taxonomy.toml")).map_err(|e| e.to_string())?;
    let file: TaxonomyFile = toml::from_str(&text).map_err(|e| e.to_string())?;
    ensure!(file.case.len() == 30, "expected 30 fixture cases, found {}", file.case.len());
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    let mut wrong = Vec::new();
    for c in &file.case {
        let out = parse_generation(&c.completion, &spec);
        let got = match (out.samples.len(), out.rejects.as_slice()) {
            (1, []) => "ok".to_string(),
            (0, [r]) => r.reason.to_string(),
            _ => format!("{} samples / {} rejects", out.samples.len(), out.rejects.len()),
        };
        *per_class.entry(c.expect.clone()).or_default() += 1;
        if got != c.expect {
            wrong.push(format!("{:?}: expected {}, got {got}", c.name, c.expect));
        }
    }
    ensure!(wrong.is_empty(), "{} misclassified: {}", wrong.len(), wrong.join("; "));
    for reason in ["overlapping_spans", "unseen_type", "span_not_found"] {
        ensure!(per_class.get(reason).copied().unwrap_or(0) > 0, "no fixture covers {reason}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut injected: HashMap<Injected, usize> = HashMap::new();
    let mut blocks_total = 0;
    for k in 0..1000 {
        let n = rng.random_range(1..=6);
        let mut text = String::new();
        if rng.random_bool(0.2) {
            text.push_str("Here are the sentences you asked for:\n\n");
        }
        let mut expect: HashMap<Injected, usize> = HashMap::new();
        for i in 1..=n {
            let (block, kind) = fuzz_block(&mut rng, i);
            *expect.entry(kind).or_default() += 1;
            text.push_str(&block);
            text.push_str(if rng.random_bool(0.3) { "\n\n\n" } else { "\n\n" });
        }
        if rng.random_bool(0.2) {
            text.push_str("Let me know if you need more.");
        }
        let out = parse_generation(&text, &spec);
        ensure!(
            out.samples.len() + out.rejects.len() == n,
            "completion {k}: {} samples + {} rejects != {n} blocks\n{text}",
            out.samples.len(),
            out.rejects.len()
        );
        for s in &out.samples {
            ensure!(validate(s, &spec).is_ok(), "completion {k}: invalid sample kept {s:?}");
        }
        let mut got: HashMap<Injected, usize> = HashMap::new();
        *got.entry(Injected::Valid).or_default() += out.samples.len();
        for r in &out.rejects {
            ensure!(text.contains(r.raw_block.as_str()), "completion {k}: reject text not from the completion");
            *got.entry(Injected::Reject(r.reason)).or_default() += 1;
        }
        got.retain(|_, v| *v > 0);
        ensure!(got == expect, "completion {k}: classes {got:?}, injected {expect:?}\n{text}");
        for (kind, v) in expect {
            *injected.entry(kind).or_default() += v;
        }
        blocks_total += n;
    }
    ensure!(injected.len() == 5, "fuzzer did not cover every class: {injected:?}");
    Ok(format!(
        "30/30 fixture cases classified, {blocks_total} fuzzed blocks in 1000 completions partitioned"
    ))
}

// ---------------------------------------------------------------- diversity

fn conll_pool() -> AttributePool {
    AttributePool::new(vec![
        AttributeDimension::topic("news topic", &["sports", "politics", "business", "science", "culture"]),
        AttributeDimension::new("writing style", 0.4, &["formal", "casual", "wire report", "op-ed"]),
    ])
}

fn diversity_statistics() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool = conll_pool();
    let draws = 10_000;
    let mut total = 0usize;
    for _ in 0..draws {
        total += sample_config_x(&pool, &mut rng).map_err(|e| e.to_string())?.x_pairs.len();
    }
    let mean = total as f64 / draws as f64;
    ensure!((1.37..=1.43).contains(&mean), "mean requirement count {mean}");

    let grouped = AttributePool::new(vec![
        AttributeDimension::topic("topic", &["a", "b"]),
        AttributeDimension::new("tone", 0.5, &["x", "y"]).in_group("voice"),
        AttributeDimension::new("audience", 0.4, &["p", "q"]).in_group("voice"),
        AttributeDimension::new("register", 0.3, &["r"]).in_group("voice"),
        AttributeDimension::new("length", 0.7, &["s"]).in_group("size"),
        AttributeDimension::new("format", 0.6, &["t"]).in_group("size"),
    ]);
    let group_of: HashMap<&str, &str> = grouped
        .dimensions
        .iter()
        .filter_map(|d| d.conflict_group.as_deref().map(|g| (d.name.as_str(), g)))
        .collect();
    let mut violations = 0;
    for _ in 0..draws {
        let c = sample_config_x(&grouped, &mut rng).map_err(|e| e.to_string())?;
        let mut seen = HashSet::new();
        for p in &c.x_pairs {
            if let Some(g) = group_of.get(p.dimension.as_str()) {
                if !seen.insert(*g) {
                    violations += 1;
                }
            }
        }
    }
    ensure!(violations == 0, "{violations} conflict-group violations");

    let view: BTreeMap<String, Vec<String>> = ["person", "location", "organization"]
        .iter()
        .map(|c| (c.to_string(), (0..20).map(|i| format!("{c}-{i}")).collect()))
        .collect();
    let mut k_hist = [0u64; 4];
    let mut thinning = Vec::new();
    for expected in [1.5, 4.5] {
        let (mut kept, mut mean_sum, mut var_sum) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let d = sample_entities_traced(&view, &mut rng, expected);
            for (_, k) in &d.per_class {
                k_hist[*k] += 1;
            }
            let (n, p) = (d.union_size as f64, d.keep_probability);
            kept += d.kept.len() as f64;
            mean_sum += n * p;
            var_sum += n * p * (1.0 - p);
        }
        let se = var_sum.sqrt();
        let z = if se > 0.0 { (kept - mean_sum) / se } else { 0.0 };
        ensure!(z.abs() <= 3.0, "E={expected}: kept {kept}, expected {mean_sum:.1}, z={z:.2}");
        thinning.push(format!("E={expected} z={z:+.2}"));
    }
    let n: u64 = k_hist.iter().sum();
    let e = n as f64 / 4.0;
    let chi2: f64 = k_hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(3.0).map_err(|e| e.to_string())?.cdf(chi2);
    ensure!(p > 0.01, "K_c histogram {k_hist:?} chi2={chi2:.2} p={p:.4}");
    let took = within(Duration::from_secs(30), start)?;
    Ok(format!(
        "mean {mean:.4}, 0 conflict violations, {}, K_c chi2 p={p:.3}, {took:.2?}",
        thinning.join(", ")
    ))
}

// ---------------------------------------------------------------- selection

fn selection_oracle(records: &[AnnotationRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&records[a], &records[b]);
        x.score
            .partial_cmp(&y.score)
            .unwrap()
            .then((x.sample_id, x.annotation_index).cmp(&(y.sample_id, y.annotation_index)))
    });
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *sizes.entry(r.annotation.class_name.as_str()).or_default() += 1;
    }
    let mut taken: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::new();
    for i in order {
        let class = records[i].annotation.class_name.as_str();
        // ceil(0.20 * n) in integers
        let cap = (sizes[class] * 20).div_ceil(100);
        let t = taken.entry(class).or_default();
        if records[i].score < -0.02 && *t < cap {
            *t += 1;
            out.push(i);
        }
    }
    out.sort_unstable();
    out
}

fn uncertainty_selection() -> Check {
    let params = SelectionParams::default();
    ensure!(params.threshold == -2e-2 && params.cap_fraction == 0.20, "default parameters {params:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let classes = ["person", "location", "organization", "misc"];
    let mut selected_total = 0;
    for case in 0..1000 {
        let n = rng.random_range(0..80);
        let records: Vec<AnnotationRecord> = (0..n)
            .map(|i| {
                let score = match rng.random_range(0..4) {
                    0 => -0.02,
                    1 => -rng.random_range(0.0..0.04),
                    2 => -(rng.random_range(0..6) as f64) * 0.01,
                    _ => -rng.random_range(0.0..3.0),
                };
                AnnotationRecord {
                    sample_id: i / 3,
                    annotation_index: i % 3,
                    annotation: Annotation::new(format!("e{i}"), *classes.choose(&mut rng).unwrap()),
                    token_logprobs: vec![score],
                    score,
                }
            })
            .collect();
        let got = select_for_correction(&records, &params);
        for &i in &got {
            ensure!(records[i].score < -0.02, "case {case}: selected score {}", records[i].score);
        }
        let mut sizes: HashMap<&str, (usize, usize)> = HashMap::new();
        for r in &records {
            sizes.entry(r.annotation.class_name.as_str()).or_default().0 += 1;
        }
        for &i in &got {
            sizes.get_mut(records[i].annotation.class_name.as_str()).unwrap().1 += 1;
        }
        for (class, (size, picked)) in sizes {
            ensure!(
                picked * 5 <= size + 4,
                "case {case}: {picked} of {size} selected for {class}"
            );
        }
        let want = selection_oracle(&records);
        ensure!(got == want, "case {case}: selected {got:?}, oracle {want:?}");
        selected_total += got.len();
    }
    Ok(format!("1000 cases match the sort oracle ({selected_total} selections), threshold and caps hold"))
}

// ---------------------------------------------------------------- correction

#[derive(Deserialize)]
struct CorrectionFile {
    cases: Vec<CorrectionCase>,
}

#[derive(Deserialize)]
struct CorrectionCase {
    name: String,
    dataset: Vec<NerSample>,
    directives: Vec<CorrectionDirective>,
    stats: CorrectionStats,
    expected: Vec<NerSample>,
}

fn correction_application() -> Check {
    let spec = news_spec();
    let text = std::fs::read_to_string(fixtures().join("corrections.json")).map_err(|e| e.to_string())?;
    let file: CorrectionFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for c in &file.cases {
        let (out, stats) = apply_directives(c.dataset.clone(), &c.directives, &spec);
        ensure!(stats == c.stats, "{}: stats {stats:?}, expected {:?}", c.name, c.stats);
        ensure!(out == c.expected, "{}: result {out:?}", c.name);
    }
    let other = [CorrectionDirective::new(
        DirectiveTarget {
            sample_id: 0,
            annotation: 0,
        },
        CorrectionAction::ReviseType("other".into()),
    )];
    let (_, s) = apply_directives(vec![news_spec().demos[0].clone()], &other, &spec);
    ensure!(s.na == 1 && s.type_ == 0, "retype to other counted as {s:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for case in 0..1000 {
        let dataset: Vec<NerSample> = (0..rng.random_range(1..5))
            .map(|_| random_sample(&mut rng))
            .filter(|s| validate(s, &spec).is_ok())
            .collect();
        let mut directives = Vec::new();
        for _ in 0..rng.random_range(0..8) {
            let sid = rng.random_range(0..dataset.len().max(1) + 1);
            let aid = rng.random_range(0..4);
            let action = match rng.random_range(0..6) {
                0 => CorrectionAction::Keep,
                1 => CorrectionAction::Drop,
                2 => CorrectionAction::ReviseType(["person", "location", "Other", "date"].choose(&mut rng).unwrap().to_string()),
                _ => CorrectionAction::ReviseSpan(WORDS.choose(&mut rng).unwrap().to_string()),
            };
            directives.push(CorrectionDirective::new(
                DirectiveTarget {
                    sample_id: sid,
                    annotation: aid,
                },
                action,
            ));
        }
        let before: usize = dataset.iter().map(|s| s.annotations.len()).sum();
        let (out, stats) = apply_directives(dataset, &directives, &spec);
        for s in &out {
            ensure!(validate(s, &spec).is_ok(), "case {case}: post-state invalid {s:?}");
        }
        ensure!(
            stats.na + stats.span + stats.type_ + stats.keep + stats.invalid == stats.prompted,
            "case {case}: {stats:?}"
        );
        let after: usize = out.iter().map(|s| s.annotations.len()).sum();
        ensure!(after <= before, "case {case}: annotation count grew");
        checked += 1;
    }
    Ok(format!(
        "{} fixture cases exact, retype-to-other is NA, {checked} random applications validate",
        file.cases.len()
    ))
}

// ---------------------------------------------------------------- evaluation

type Run = (usize, usize, String);

fn decode(tags: &[Tag]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        match t {
            Tag::Begin(c) => out.push((i, i + 1, c.clone())),
            Tag::Inside(_) => out.last_mut().unwrap().1 = i + 1,
            Tag::Outside => {}
        }
    }
    out
}

/// Best total credit over every one-to-one pairing, in half units.
fn best_pairing(pred: &[Run], gold: &[Run], used: &mut Vec<bool>, partial: bool) -> u64 {
    let Some((p, rest)) = pred.split_first() else { return 0 };
    let mut best = best_pairing(rest, gold, used, partial);
    for (j, g) in gold.iter().enumerate() {
        if used[j] || p.2 != g.2 {
            continue;
        }
        let credit = if p.0 == g.0 && p.1 == g.1 {
            2
        } else if partial && p.0 < g.1 && g.0 < p.1 {
            1
        } else {
            continue;
        };
        used[j] = true;
        best = best.max(credit + best_pairing(rest, gold, used, partial));
        used[j] = false;
    }
    best
}

fn oracle_f1(pred: &[TokenizedSample], gold: &[TokenizedSample], partial: bool) -> (f64, f64, f64) {
    let (mut tp, mut np, mut ng) = (0u64, 0u64, 0u64);
    for (p, g) in pred.iter().zip(gold) {
        let (pr, gr) = (decode(&p.tags), decode(&g.tags));
        tp += best_pairing(&pr, &gr, &mut vec![false; gr.len()], partial);
        np += pr.len() as u64;
        ng += gr.len() as u64;
    }
    let tp = tp as f64 / 2.0;
    let precision = if np == 0 { 0.0 } else { tp / np as f64 };
    let recall = if ng == 0 { 0.0 } else { tp / ng as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

fn random_tags(rng: &mut ChaCha8Rng, len: usize) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    let mut i = 0;
    let mut n = 0;
    while i < len && n < 6 {
        if rng.random_bool(0.35) {
            let w = rng.random_range(1..=3).min(len - i);
            let c = ["a", "b"].choose(rng).unwrap().to_string();
            tags[i] = Tag::Begin(c.clone());
            for t in &mut tags[i + 1..i + w] {
                *t = Tag::Inside(c.clone());
            }
            i += w;
            n += 1;
        } else {
            i += 1;
        }
    }
    tags
}

fn evaluation_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for _ in 0..rng.random_range(1..=5) {
            let len = rng.random_range(1..=14);
            let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
            gold.push(TokenizedSample {
                tokens: tokens.clone(),
                tags: random_tags(&mut rng, len),
            });
            pred.push(TokenizedSample {
                tokens,
                tags: random_tags(&mut rng, len),
            });
        }
        let exact = evaluate(&pred, &gold, MatchMode::Exact).map_err(|e| e.to_string())?;
        let partial = evaluate(&pred, &gold, MatchMode::Partial).map_err(|e| e.to_string())?;
        for (report, is_partial) in [(&exact, false), (&partial, true)] {
            let (p, r, f) = oracle_f1(&pred, &gold, is_partial);
            let m = &report.micro;
            let err = (m.precision - p).abs().max((m.recall - r).abs()).max((m.f1 - f).abs());
            worst = worst.max(err);
            ensure!(err <= 1e-9, "case {case} ({}): got {m:?}, oracle P={p} R={r} F1={f}", report.mode);
        }
        ensure!(
            partial.micro.f1 + 1e-12 >= exact.micro.f1
                && partial.micro.precision + 1e-12 >= exact.micro.precision
                && partial.micro.recall + 1e-12 >= exact.micro.recall,
            "case {case}: partial below exact"
        );
    }
    let tokens: Vec<String> = ["New", "York", "City"].iter().map(|s| s.to_string()).collect();
    let gold = TokenizedSample {
        tokens: tokens.clone(),
        tags: vec![Tag::Begin("loc".into()), Tag::Inside("loc".into()), Tag::Outside],
    };
    let pred = TokenizedSample {
        tokens,
        tags: vec![Tag::Outside, Tag::Begin("loc".into()), Tag::Inside("loc".into())],
    };
    let single = evaluate(&[pred], &[gold], MatchMode::Partial).map_err(|e| e.to_string())?.micro;
    ensure!(
        single.precision == 0.5 && single.recall == 0.5 && single.f1 == 0.5,
        "single overlap scored {single:?}"
    );
    Ok(format!(
        "1000 corpora agree with exhaustive pairing (max error {worst:.1e}), single overlap P=R=F1=0.5, partial >= exact"
    ))
}

// ---------------------------------------------------------------- cost

fn cost_arithmetic() -> Check {
    let prices = PriceTable::default();
    let usage = |i, o| Usage {
        prompt_tokens: i,
        completion_tokens: o,
    };
    let d = charge(&usage(1000, 500), "gpt-3.5-turbo", &prices).map_err(|e| e.to_string())?;
    ensure!(d == "0.002".parse::<Dollars>().unwrap() && d.to_string() == "$0.002", "GPT-3.5 charge {d}");
    let d4 = charge(&usage(1000, 1000), "gpt-4", &prices).map_err(|e| e.to_string())?;
    ensure!(d4 == "0.09".parse::<Dollars>().unwrap(), "GPT-4 charge {d4}");
    ensure!(charge(&usage(0, 0), "gpt-3.5-turbo", &prices).unwrap() == Dollars::ZERO, "zero usage");
    ensure!(charge(&usage(1, 1), "nope", &prices).is_err(), "unknown model accepted");

    // nano-dollars per token: $0.001/1K = 1000, $0.002/1K = 2000, $0.03/1K = 30000, $0.06/1K = 60000
    let rates: HashMap<&str, (i64, i64)> = [("gpt-3.5-turbo", (1000, 2000)), ("gpt-4", (30_000, 60_000))].into();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ledger = CostLedger::default();
    let mut grand = 0i64;
    let mut per_kind: HashMap<GenKind, i64> = HashMap::new();
    for i in 0..5000 {
        let model = *["gpt-3.5-turbo", "gpt-4"].choose(&mut rng).unwrap();
        let u = usage(rng.random_range(0..5000), rng.random_range(0..2000));
        let dollars = charge(&u, model, &prices).map_err(|e| e.to_string())?;
        let (ri, ro) = rates[model];
        let want = u.prompt_tokens as i64 * ri + u.completion_tokens as i64 * ro;
        ensure!(dollars.nanos() == want, "{model} {u:?}: {} nanos, expected {want}", dollars.nanos());
        let kind = *GenKind::ALL.choose(&mut rng).unwrap();
        grand += want;
        *per_kind.entry(kind).or_default() += want;
        ledger.push(LedgerEntry {
            request_index: i,
            kind,
            model_id: model.into(),
            usage: u,
            dollars,
            attempts: 1,
        });
    }
    ensure!(ledger.total().nanos() == grand, "ledger total {}", ledger.total());
    let by_kind = ledger.totals_by_kind();
    ensure!(by_kind.values().map(|t| t.dollars).sum::<Dollars>() == ledger.total(), "kind totals do not sum");
    for (k, t) in &by_kind {
        ensure!(t.dollars.nanos() == per_kind.get(k).copied().unwrap_or(0), "{k} total {}", t.dollars);
    }
    let round = CostLedger::from_jsonl(&ledger.to_jsonl()).map_err(|e| e.to_string())?;
    ensure!(round == ledger, "ledger changed through JSONL");
    Ok(format!("(1000 in, 500 out) at GPT-3.5 rates = {d}, 5000-entry ledger conserves {}", ledger.total()))
}

// ---------------------------------------------------------------- replay

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn digest_listing(tree: &BTreeMap<PathBuf, Vec<u8>>) -> String {
    tree.iter()
        .map(|(p, b)| {
            let name = p.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            format!("{}  {name}\n", nersynth_core::pipeline::sha256_hex(b))
        })
        .collect()
}

fn end_to_end_replay() -> Check {
    let start = Instant::now();
    let dir = fixtures().join("micro");
    let stages = [Stage::Attrs, Stage::Generate, Stage::Correct, Stage::Export];
    let mut trees = Vec::new();
    for _ in 0..2 {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config = PipelineConfig::load(&dir.join("config.toml")).map_err(|e| e.to_string())?;
        let mut runner = Runner::new(config, out.path()).map_err(|e| e.to_string())?;
        for s in stages {
            runner.run(s).map_err(|e| format!("{s}: {e}"))?;
        }
        trees.push(tree(out.path()));
    }
    ensure!(trees[0] == trees[1], "run directories differ between executions");
    ensure!(trees[0].keys().any(|p| p.ends_with("export/train.conll")), "no export written");

    // Digests recorded when the fixtures were made; a mismatch on another
    // platform means the run is not portable.
    let listing = digest_listing(&trees[0]);
    let golden = dir.join("run.sha256");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &listing).map_err(|e| e.to_string())?;
    }
    let want = std::fs::read_to_string(&golden).map_err(|e| format!("{}: {e}", golden.display()))?;
    ensure!(listing == want, "run digests differ from {}:\n{listing}", golden.display());
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!("{} files byte-identical across two runs and the recorded digests, {took:.2?}", trees[0].len()))
}

// ---------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 8] = [
        ("bio-round-trip", bio_round_trip),
        ("parser-taxonomy", parser_taxonomy),
        ("diversity-statistics", diversity_statistics),
        ("uncertainty-selection", uncertainty_selection),
        ("correction-application", correction_application),
        ("evaluation-oracle", evaluation_oracle),
        ("cost-arithmetic", cost_arithmetic),
        ("end-to-end-replay", end_to_end_replay),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
