//! Stage orchestration over a run directory.
//!
//! Each stage reads the outputs of earlier stages from `<out>/<stage>/` and
//! writes its own directory in one step: files go to a hidden sibling first,
//! which is then renamed into place. Nothing written holds a timestamp or an
//! absolute path, so a replayed run is byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::config::{BackendKind, ConfigError, PipelineConfig, Variant};
use super::export::{export_conll, ExportManifest};
use super::sha256_hex;
use crate::correction::{
    apply_directives, plan_batches, select_for_correction, align_logprobs, AnnotationRecord, CorrectionDirective,
};
use crate::diversity::{
    render_requirement, sample_config_x, sample_config_xy, sample_config_y_latent, sample_config_y_vanilla,
    DiversityConfig, DiversityError, EntityPool, EntityPoolVariant, PoolError, PoolFile,
};
use crate::eval::{evaluate, EvalError, EvalReport, MatchMode};
use crate::gateway::{
    Backend, CompletionRequest, CompletionResponse, CostLedger, Gateway, GatewayError, GenKind, HttpBackend, Recorder,
    ReplayBackend, SyntheticBackend,
};
use crate::parser::{count_blocks, parse_correction_response, parse_entity_list, parse_generation_detailed, parse_prediction, Reject};
use crate::prompting::{
    build_attr_dim_prompt, build_attr_value_prompt_for, build_correction_prompt, build_entity_prompt,
    build_icl_prompt, build_sample_prompt, CorrectionItem, PromptError, TemplateSet,
};
use crate::schema::io::{read_conll, read_jsonl, write_conll, write_jsonl, IoError};
use crate::schema::{dedup_indices, detokenize_with_offsets, NerSample, Tag, TaskSpec, TaskSpecError, TokenizedSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Attrs,
    Entities,
    Generate,
    Correct,
    Export,
    Eval,
    Cost,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Attrs,
        Stage::Entities,
        Stage::Generate,
        Stage::Correct,
        Stage::Export,
        Stage::Eval,
        Stage::Cost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Attrs => "attrs",
            Stage::Entities => "entities",
            Stage::Generate => "generate",
            Stage::Correct => "correct",
            Stage::Export => "export",
            Stage::Eval => "eval",
            Stage::Cost => "cost",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task spec: {0}")]
    Task(#[from] TaskSpecError),
    #[error("pools: {0}")]
    Pool(#[from] PoolError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("diversity sampling: {0}")]
    Diversity(#[from] DiversityError),
    #[error("stage {stage} needs {needs}")]
    MissingPrerequisite { stage: Stage, needs: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Task(_) | PipelineError::Pool(_) | PipelineError::Prompt(_) => 2,
            PipelineError::Gateway(GatewayError::BudgetExceeded { .. }) => 3,
            PipelineError::MissingPrerequisite { .. } => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("serializable") + "\n").into_bytes()
}

/// Files for one stage directory, committed together.
struct StageOutput {
    stage: Stage,
    files: BTreeMap<String, Vec<u8>>,
}

impl StageOutput {
    fn new(stage: Stage) -> Self {
        Self {
            stage,
            files: BTreeMap::new(),
        }
    }

    fn put(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), bytes.into());
    }

    fn ledger(&mut self, ledger: &CostLedger) {
        self.put("ledger.jsonl", ledger.to_jsonl());
    }

    /// Adds `manifest.json` (the given fields plus file digests) and
    /// replaces the stage directory.
    fn commit(mut self, out: &Path, mut manifest: serde_json::Value) -> Result<serde_json::Value, PipelineError> {
        let digests: BTreeMap<&str, String> = self.files.iter().map(|(k, v)| (k.as_str(), sha256_hex(v))).collect();
        manifest["stage"] = json!(self.stage);
        manifest["files"] = json!(digests);
        self.put("manifest.json", to_json(&manifest));

        let dir = out.join(self.stage.as_str());
        let tmp = out.join(format!(".{}.tmp", self.stage.as_str()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        for (name, bytes) in &self.files {
            let p = tmp.join(name);
            std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        std::fs::rename(&tmp, &dir).map_err(|e| io_err(&dir, e))?;
        Ok(manifest)
    }
}

#[derive(Serialize, Deserialize)]
struct RequestLog {
    request_index: usize,
    requirement: DiversityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CompletionLog<'a> {
    request_index: usize,
    text: &'a str,
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Serialize)]
struct RejectLog<'a> {
    request_index: usize,
    #[serde(flatten)]
    reject: &'a Reject,
}

/// Inputs for the eval stage.
#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub gold: PathBuf,
    /// Predictions to score; when absent they are produced by few-shot
    /// prompting over the gold sentences.
    pub pred: Option<PathBuf>,
}

/// Runs stages for one config against one run directory.
pub struct Runner {
    config: PipelineConfig,
    spec: TaskSpec,
    templates: TemplateSet,
    out: PathBuf,
    backend: Option<Arc<dyn Backend>>,
}

impl Runner {
    pub fn new(config: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.check()?;
        let spec = TaskSpec::load(&config.task)?;
        let templates = match &config.templates {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        Ok(Self {
            config,
            spec,
            templates,
            out: out.into(),
            backend: None,
        })
    }

    /// Uses `backend` instead of the one named in the config.
    pub fn with_backend(mut self, backend: Arc<dyn Backend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn backend(&mut self) -> Result<Arc<dyn Backend>, PipelineError> {
        if let Some(b) = &self.backend {
            return Ok(b.clone());
        }
        let fixtures = || self.config.fixtures.clone().expect("checked with the config");
        let source = |kind: BackendKind| -> Result<Box<dyn Backend>, PipelineError> {
            Ok(match kind {
                BackendKind::Synthetic => Box::new(SyntheticBackend::new(&self.spec)),
                _ => Box::new(HttpBackend::new(&self.config.live)?),
            })
        };
        let b: Arc<dyn Backend> = match self.config.backend {
            BackendKind::Replay => Arc::new(ReplayBackend::new(fixtures())),
            BackendKind::Record => Arc::new(Recorder::new(fixtures(), source(self.config.record_source)?)),
            kind => Arc::from(source(kind)?),
        };
        self.backend = Some(b.clone());
        Ok(b)
    }

    fn gateway(&mut self) -> Result<Gateway, PipelineError> {
        Ok(Gateway::new(self.backend()?, self.config.price_table())
            .with_retry(self.config.retry.clone())
            .with_concurrency(self.config.concurrency))
    }

    fn stage_path(&self, stage: Stage, file: &str) -> PathBuf {
        self.out.join(stage.as_str()).join(file)
    }

    fn has(&self, stage: Stage, file: &str) -> bool {
        self.stage_path(stage, file).is_file()
    }

    fn read(&self, needed_by: Stage, stage: Stage, file: &str) -> Result<String, PipelineError> {
        let path = self.stage_path(stage, file);
        if !path.is_file() {
            return Err(PipelineError::MissingPrerequisite {
                stage: needed_by,
                needs: format!("{stage}/{file} (run the {stage} stage first)"),
            });
        }
        std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))
    }

    fn read_jsonl<T: DeserializeOwned>(&self, needed_by: Stage, stage: Stage, file: &str) -> Result<Vec<T>, PipelineError> {
        let text = self.read(needed_by, stage, file)?;
        read_jsonl(&text).map_err(|e: IoError| io_err(&self.stage_path(stage, file), e))
    }

    fn read_manifest(&self, needed_by: Stage, stage: Stage) -> Result<serde_json::Value, PipelineError> {
        let text = self.read(needed_by, stage, "manifest.json")?;
        serde_json::from_str(&text).map_err(|e| io_err(&self.stage_path(stage, "manifest.json"), e))
    }

    /// The most complete pool file: from the entities stage, else the attrs
    /// stage, else the configured one.
    fn current_pools(&self) -> Result<Option<PoolFile>, PipelineError> {
        for stage in [Stage::Entities, Stage::Attrs] {
            let p = self.stage_path(stage, "pools.toml");
            if p.is_file() {
                return Ok(Some(PoolFile::load(&p)?));
            }
        }
        match &self.config.pools {
            Some(p) => Ok(Some(PoolFile::load(p)?)),
            None => Ok(None),
        }
    }

    pub fn run(&mut self, stage: Stage) -> Result<serde_json::Value, PipelineError> {
        match stage {
            Stage::Attrs => self.attrs(),
            Stage::Entities => self.entities(),
            Stage::Generate => self.generate(),
            Stage::Correct => self.correct(),
            Stage::Export => self.export(),
            Stage::Eval => Err(PipelineError::Config(ConfigError::Invalid(
                "the eval stage needs gold data; use Runner::eval".into(),
            ))),
            Stage::Cost => self.cost().map(|(m, _)| m),
        }
    }

    fn complete_all(gateway: &Gateway, requests: Vec<CompletionRequest>) -> Result<Vec<CompletionResponse>, PipelineError> {
        gateway
            .complete_all(requests)
            .into_iter()
            .map(|r| r.map_err(PipelineError::from))
            .collect()
    }

    /// Fills attribute values for dimensions that ask for generation or
    /// have none yet.
    pub fn attrs(&mut self) -> Result<serde_json::Value, PipelineError> {
        let path = self.config.pools.clone().ok_or_else(|| {
            ConfigError::Invalid("the attrs stage needs a pools file".into())
        })?;
        let mut pools = PoolFile::load(&path)?;
        let model = self.config.models.attrs().to_string();
        let gateway = self.gateway()?;
        let mut out = StageOutput::new(Stage::Attrs);

        let mut suggestions = Vec::new();
        if !self.config.attr_dimension_examples.is_empty() {
            let bundle = build_attr_dim_prompt(&self.templates, &self.spec, &self.config.attr_dimension_examples)?;
            let resp = gateway.complete(CompletionRequest::new(bundle, GenKind::AttrDim, model.as_str()))?;
            suggestions = parse_entity_list(&resp.text).entities;
            out.put("dimension_suggestions.txt", resp.text);
        }

        let targets: Vec<usize> = (0..pools.dimensions.len())
            .filter(|&i| pools.dimensions[i].generate.is_some() || pools.dimensions[i].values.is_empty())
            .collect();
        let requests = targets
            .iter()
            .map(|&i| {
                let dim = &pools.dimensions[i];
                build_attr_value_prompt_for(&self.templates, &self.spec, dim, self.config.attr_values_per_dimension)
                    .map(|b| CompletionRequest::new(b, GenKind::AttrVal, model.as_str()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let responses = Self::complete_all(&gateway, requests)?;
        let mut generated = BTreeMap::new();
        for (&i, resp) in targets.iter().zip(&responses) {
            let dim = &mut pools.dimensions[i];
            let before = dim.values.len();
            for v in parse_entity_list(&resp.text).entities {
                if !dim.values.contains(&v) {
                    dim.values.push(v);
                }
            }
            dim.generate = None;
            generated.insert(dim.name.clone(), dim.values.len() - before);
        }
        pools.attribute_pool().check()?;
        gateway.flush()?;
        out.put("pools.toml", toml::to_string(&pools).expect("serializable"));
        out.ledger(&gateway.ledger());
        out.commit(
            &self.out,
            json!({
                "requests": gateway.ledger().entries.len(),
                "values_added": generated,
                "dimension_suggestions": suggestions.len(),
            }),
        )
    }

    /// Fills the entity pool: one list per class, or per (topic, class) for
    /// a latent pool.
    pub fn entities(&mut self) -> Result<serde_json::Value, PipelineError> {
        let mut pools = self.current_pools()?.ok_or_else(|| {
            ConfigError::Invalid("the entities stage needs a pools file".into())
        })?;
        let Some(mut pool) = pools.entities.take() else {
            return Err(ConfigError::Invalid("the pools file has no [entities] section".into()).into());
        };
        let count = pool.generate.unwrap_or(self.config.entities_per_class);
        let topics: Vec<Option<String>> = match pool.variant {
            EntityPoolVariant::Vanilla => vec![None],
            EntityPoolVariant::Latent => {
                let values = pools.attribute_pool().topic().map(|t| t.values.clone()).unwrap_or_default();
                if values.is_empty() {
                    return Err(PipelineError::MissingPrerequisite {
                        stage: Stage::Entities,
                        needs: "topic values for a latent entity pool (run the attrs stage first)".into(),
                    });
                }
                values.into_iter().map(Some).collect()
            }
        };
        let force = pool.generate.is_some();
        let mut jobs = Vec::new();
        for topic in &topics {
            for class in self.spec.class_names() {
                let existing = match topic {
                    None => pool.vanilla.get(class),
                    Some(t) => pool.latent.get(t).and_then(|m| m.get(class)),
                };
                if force || existing.is_none_or(|l| l.is_empty()) {
                    jobs.push((topic.clone(), class.to_string()));
                }
            }
        }
        let model = self.config.models.entities().to_string();
        let requests = jobs
            .iter()
            .map(|(topic, class)| {
                build_entity_prompt(&self.templates, &self.spec, class, count, topic.as_deref())
                    .map(|b| CompletionRequest::new(b, GenKind::Entity, model.as_str()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let gateway = self.gateway()?;
        let responses = Self::complete_all(&gateway, requests)?;
        let mut skipped = 0;
        for ((topic, class), resp) in jobs.iter().zip(&responses) {
            let list = parse_entity_list(&resp.text);
            skipped += list.skipped_lines;
            let slot = match topic {
                None => pool.vanilla.entry(class.clone()).or_default(),
                Some(t) => pool.latent.entry(t.clone()).or_default().entry(class.clone()).or_default(),
            };
            slot.extend(list.entities);
        }
        pool.generate = None;
        pool.dedup_lists();
        let total: usize = match pool.variant {
            EntityPoolVariant::Vanilla => pool.vanilla.values().map(Vec::len).sum(),
            EntityPoolVariant::Latent => pool.latent.values().flat_map(|m| m.values()).map(Vec::len).sum(),
        };
        pools.entities = Some(pool);
        gateway.flush()?;
        let mut out = StageOutput::new(Stage::Entities);
        out.put("pools.toml", toml::to_string(&pools).expect("serializable"));
        out.ledger(&gateway.ledger());
        out.commit(
            &self.out,
            json!({
                "requests": responses.len(),
                "entities": total,
                "skipped_lines": skipped,
            }),
        )
    }

    fn sample_requirement(
        &self,
        pools: &Option<PoolFile>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DiversityConfig, Option<String>), PipelineError> {
        let e = self.spec.expected_entity_requirement;
        let attrs = pools.as_ref().map(PoolFile::attribute_pool).unwrap_or_default();
        let entities = pools.as_ref().and_then(|p| p.entities.as_ref());
        let entities = || entities.expect("checked before sampling");
        let (config, warning) = match self.config.variant {
            Variant::Simple => (DiversityConfig::default(), None),
            Variant::X => (sample_config_x(&attrs, rng)?, None),
            Variant::YVanilla => (sample_config_y_vanilla(entities(), rng, e)?, None),
            Variant::YLatent => sample_config_y_latent(&attrs, entities(), rng, e)?,
            Variant::Xy => sample_config_xy(&attrs, entities(), rng, e)?,
        };
        Ok((config, warning.map(|w| w.to_string())))
    }

    fn check_pools(&self, pools: &Option<PoolFile>) -> Result<(), PipelineError> {
        let variant = self.config.variant;
        let missing = |needs: &str| PipelineError::MissingPrerequisite {
            stage: Stage::Generate,
            needs: needs.to_string(),
        };
        let Some(p) = pools else {
            return Ok(());
        };
        if variant.uses_attributes() {
            let ap = p.attribute_pool();
            if ap.topic().is_none_or(|t| t.values.is_empty()) {
                return Err(missing("topic attribute values (run the attrs stage first)"));
            }
            if matches!(variant, Variant::X | Variant::Xy) {
                if let Some(d) = ap.dimensions.iter().find(|d| d.values.is_empty()) {
                    return Err(missing(&format!("values for dimension {:?} (run the attrs stage first)", d.name)));
                }
            }
            ap.check()?;
        }
        if variant.uses_entities() {
            let want = if variant == Variant::YVanilla {
                EntityPoolVariant::Vanilla
            } else {
                EntityPoolVariant::Latent
            };
            let pool: Option<&EntityPool> = p.entities.as_ref();
            let filled = pool.is_some_and(|e| match want {
                EntityPoolVariant::Vanilla => e.vanilla.values().any(|l| !l.is_empty()),
                EntityPoolVariant::Latent => e.latent.values().flat_map(|m| m.values()).any(|l| !l.is_empty()),
            });
            if pool.is_some_and(|e| e.variant != want) {
                return Err(ConfigError::Invalid(format!("variant {variant:?} needs a {want:?} entity pool")).into());
            }
            if !filled {
                return Err(missing("a filled entity pool (run the entities stage first)"));
            }
        }
        Ok(())
    }

    /// Issues sample prompts until enough raw samples are parsed, then
    /// validates, deduplicates and scores every annotation.
    pub fn generate(&mut self) -> Result<serde_json::Value, PipelineError> {
        let pools = if self.config.variant == Variant::Simple {
            None
        } else {
            self.current_pools()?
        };
        self.check_pools(&pools)?;
        let per_prompt = self.config.samples_per_prompt();
        let model = self.config.models.generate().to_string();
        let seed = self.config.seed.unwrap_or(0);

        // Fail on template or sampling errors before any request goes out;
        // the factory below repeats the same calls.
        {
            let mut probe_rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, _) = self.sample_requirement(&pools, &mut probe_rng)?;
            let req = render_requirement(&c, &self.templates.requirement_templates(), self.spec.sample_description())
                .map_err(PromptError::from)?;
            build_sample_prompt(&self.templates, &self.spec, &req, per_prompt)?;
        }

        let gateway = self.gateway()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut logs: Vec<RequestLog> = Vec::new();
        let rt = self.templates.requirement_templates();
        let responses = {
            let this = &*self;
            let factory = |i: usize| {
                let (config, warning) = this.sample_requirement(&pools, &mut rng).expect("checked above");
                if let Some(w) = &warning {
                    log::warn!("request {i}: {w}");
                }
                let text = render_requirement(&config, &rt, this.spec.sample_description()).expect("checked above");
                let bundle = build_sample_prompt(&this.templates, &this.spec, &text, per_prompt).expect("checked above");
                logs.push(RequestLog {
                    request_index: i,
                    requirement: config,
                    warning,
                });
                CompletionRequest::new(bundle, GenKind::Ner, model.as_str())
            };
            gateway.generate_until(
                self.config.target_raw_samples,
                per_prompt,
                self.config.max_requests,
                factory,
                |r| count_blocks(&r.text),
            )?
        };
        gateway.flush()?;

        let mut parsed = Vec::new();
        let mut rejects = Vec::new();
        let mut reject_counts: BTreeMap<String, usize> = BTreeMap::new();
        for (i, resp) in responses.iter().enumerate() {
            let outcome = parse_generation_detailed(&resp.text, &self.spec);
            for r in outcome.rejects {
                *reject_counts.entry(serde_json::to_value(r.reason).expect("enum").as_str().unwrap_or("?").to_string()).or_default() += 1;
                rejects.push((i, r));
            }
            parsed.extend(outcome.samples.into_iter().map(|s| (i, s)));
        }
        let generated = parsed.len() + rejects.len();
        let valid = parsed.len();
        let samples: Vec<NerSample> = parsed.iter().map(|(_, p)| p.sample.clone()).collect();
        let (kept, report) = dedup_indices(&samples);

        let mut kept_samples = Vec::with_capacity(kept.len());
        let mut records = Vec::new();
        let mut unscored = 0;
        for (sample_id, &k) in kept.iter().enumerate() {
            let (req, p) = &parsed[k];
            for (ai, ann) in p.sample.annotations.iter().enumerate() {
                let lps = align_logprobs(&responses[*req].token_logprobs, &p.item_ranges[ai]);
                match AnnotationRecord::new(sample_id, ai, ann.clone(), lps) {
                    Ok(r) => records.push(r),
                    Err(_) => unscored += 1,
                }
            }
            kept_samples.push(p.sample.clone());
        }

        let mut out = StageOutput::new(Stage::Generate);
        out.put("requests.jsonl", write_jsonl(&logs));
        let completions: Vec<CompletionLog> = responses
            .iter()
            .enumerate()
            .map(|(i, r)| CompletionLog {
                request_index: i,
                text: &r.text,
                prompt_tokens: r.usage.prompt_tokens,
                completion_tokens: r.usage.completion_tokens,
            })
            .collect();
        out.put("completions.jsonl", write_jsonl(&completions));
        let reject_logs: Vec<RejectLog> = rejects
            .iter()
            .map(|(i, r)| RejectLog {
                request_index: *i,
                reject: r,
            })
            .collect();
        out.put("rejects.jsonl", write_jsonl(&reject_logs));
        out.put("samples.jsonl", write_jsonl(&kept_samples));
        out.put("records.jsonl", write_jsonl(&records));
        out.ledger(&gateway.ledger());
        out.commit(
            &self.out,
            json!({
                "variant": self.config.variant,
                "seed": seed,
                "samples_per_prompt": per_prompt,
                "requests": responses.len(),
                "generated": generated,
                "valid": valid,
                "rejects": reject_counts,
                "duplicates_removed": report.duplicates_removed,
                "conflicts_removed": report.conflicts_removed,
                "deduped": kept_samples.len(),
                "annotations": records.len() + unscored,
                "unscored_annotations": unscored,
                "warnings": logs.iter().filter(|l| l.warning.is_some()).count(),
            }),
        )
    }

    /// Selects uncertain annotations, asks for corrections in same-class
    /// batches with greedy decoding, and applies the answers.
    pub fn correct(&mut self) -> Result<serde_json::Value, PipelineError> {
        let samples: Vec<NerSample> = self.read_jsonl(Stage::Correct, Stage::Generate, "samples.jsonl")?;
        let records: Vec<AnnotationRecord> = self.read_jsonl(Stage::Correct, Stage::Generate, "records.jsonl")?;
        let selected = select_for_correction(&records, &self.config.selection);
        let batches = plan_batches(&records, &selected, self.config.correction_batch_size);
        let model = self.config.models.correction().to_string();

        let mut requests = Vec::with_capacity(batches.len());
        for batch in &batches {
            let class = records[batch[0]].annotation.class_name.clone();
            let cc = self.config.corrections.get(&class).cloned().unwrap_or_default();
            let items: Vec<CorrectionItem> = batch
                .iter()
                .map(|&r| CorrectionItem {
                    sentence: samples[records[r].sample_id].sentence.clone(),
                    annotation: records[r].annotation.clone(),
                })
                .collect();
            let bundle = build_correction_prompt(
                &self.templates,
                &self.spec,
                &class,
                &cc.instruction,
                &cc.demos,
                &items,
                self.config.correction_batch_size,
            )?;
            requests.push(CompletionRequest::new(bundle, GenKind::Correction, model.as_str()).greedy());
        }
        let gateway = self.gateway()?;
        let responses = Self::complete_all(&gateway, requests)?;
        gateway.flush()?;

        let mut directives = Vec::new();
        for (batch, resp) in batches.iter().zip(&responses) {
            let targets: Vec<_> = batch.iter().map(|&r| records[r].target()).collect();
            let answers = parse_correction_response(&resp.text, batch.len());
            directives.extend(CorrectionDirective::from_answers(&targets, answers));
        }
        let pre: usize = samples.iter().map(|s| s.annotations.len()).sum();
        let (corrected, stats) = apply_directives(samples, &directives, &self.spec);
        let post: usize = corrected.iter().map(|s| s.annotations.len()).sum();

        let selection: Vec<&AnnotationRecord> = selected.iter().map(|&i| &records[i]).collect();
        let mut out = StageOutput::new(Stage::Correct);
        out.put("selection.jsonl", write_jsonl(&selection));
        out.put("directives.jsonl", write_jsonl(&directives));
        out.put("samples.jsonl", write_jsonl(&corrected));
        out.put("stats.json", to_json(&stats));
        out.ledger(&gateway.ledger());
        out.commit(
            &self.out,
            json!({
                "records": records.len(),
                "selected": selected.len(),
                "batches": batches.len(),
                "samples": corrected.len(),
                "annotations_pre": pre,
                "annotations_post": post,
                "stats": stats,
            }),
        )
    }

    /// Writes the training files from the corrected samples, or from the
    /// generated ones when no correction stage ran.
    pub fn export(&mut self) -> Result<serde_json::Value, PipelineError> {
        let gen = self.read_manifest(Stage::Export, Stage::Generate)?;
        let count = |v: &serde_json::Value, k: &str| v[k].as_u64().unwrap_or(0) as usize;
        let corrected = self.has(Stage::Correct, "samples.jsonl");
        let source = if corrected { Stage::Correct } else { Stage::Generate };
        let dataset: Vec<NerSample> = self.read_jsonl(Stage::Export, source, "samples.jsonl")?;
        let pre = if corrected {
            count(&self.read_manifest(Stage::Export, Stage::Correct)?, "annotations_pre")
        } else {
            count(&gen, "annotations")
        };
        let demos: Vec<NerSample> = if self.spec.lowercase_outputs {
            self.spec.demos.iter().map(NerSample::to_lowercase).collect()
        } else {
            self.spec.demos.clone()
        };
        let files = export_conll(&dataset, &demos, self.config.demo_replication);

        let mut out = StageOutput::new(Stage::Export);
        out.put("train.conll", files.conll.as_str());
        out.put("train.weights", files.weights.as_str());
        out.put("train.jsonl", files.jsonl.as_str());
        let manifest = ExportManifest {
            generated: count(&gen, "generated"),
            valid: count(&gen, "valid"),
            deduped: count(&gen, "deduped"),
            post_correction: dataset.len(),
            annotations_pre_correction: pre,
            annotations_post_correction: dataset.iter().map(|s| s.annotations.len()).sum(),
            source: source.to_string(),
            demos: demos.len(),
            demo_replication: self.config.demo_replication,
            conll_blocks: files.blocks,
            unaligned_dropped: files.unaligned,
            digests: out.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        };
        if !manifest.is_monotone() {
            log::warn!("export counts are not monotone: {manifest:?}");
        }
        let mut value = serde_json::to_value(&manifest).expect("serializable");
        value.as_object_mut().expect("object").remove("digests");
        out.commit(&self.out, value)
    }

    /// Scores predictions against gold CoNLL data, producing the
    /// predictions by few-shot prompting when none are given.
    pub fn eval(&mut self, inputs: &EvalInputs) -> Result<(serde_json::Value, String), PipelineError> {
        let read = |p: &Path| -> Result<Vec<TokenizedSample>, PipelineError> {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            read_conll(&text).map_err(|e| io_err(p, e))
        };
        let gold = read(&inputs.gold)?;
        let mut out = StageOutput::new(Stage::Eval);
        let mut dropped = 0;
        let pred = match &inputs.pred {
            Some(p) => read(p)?,
            None => {
                let model = self.config.models.prediction().to_string();
                let sentences: Vec<(String, Vec<std::ops::Range<usize>>)> =
                    gold.iter().map(|g| detokenize_with_offsets(&g.tokens)).collect();
                let requests = sentences
                    .iter()
                    .map(|(s, _)| {
                        build_icl_prompt(&self.templates, &self.spec, &self.spec.demos, s)
                            .map(|b| CompletionRequest::new(b, GenKind::Prediction, model.as_str()).greedy())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let gateway = self.gateway()?;
                let responses = Self::complete_all(&gateway, requests)?;
                gateway.flush()?;
                out.ledger(&gateway.ledger());
                let mut pred = Vec::with_capacity(gold.len());
                for (((sentence, offsets), resp), gold_sample) in sentences.iter().zip(&responses).zip(&gold) {
                    let (sample, d) = parse_prediction(&resp.text, sentence, &self.spec);
                    dropped += d;
                    pred.push(project(&sample, offsets, &gold_sample.tokens));
                }
                out.put("predictions.conll", write_conll(&pred));
                pred
            }
        };
        let exact = evaluate(&pred, &gold, MatchMode::Exact)?;
        let partial = evaluate(&pred, &gold, MatchMode::Partial)?;
        let text = format!("exact\n{}\npartial\n{}", exact.to_text(), partial.to_text());
        #[derive(Serialize)]
        struct Both<'a> {
            exact: &'a EvalReport,
            partial: &'a EvalReport,
        }
        out.put("report.json", to_json(&Both { exact: &exact, partial: &partial }));
        out.put("report.txt", text.as_str());
        let manifest = out.commit(
            &self.out,
            json!({
                "sentences": gold.len(),
                "predicted_by_prompting": inputs.pred.is_none(),
                "dropped_predictions": dropped,
                "exact_f1": exact.f1(),
                "partial_f1": partial.f1(),
            }),
        )?;
        Ok((manifest, text))
    }

    /// Sums the ledgers of every stage that ran.
    pub fn cost(&mut self) -> Result<(serde_json::Value, String), PipelineError> {
        let mut all = CostLedger::default();
        let mut per_stage = BTreeMap::new();
        for stage in Stage::ALL {
            if !self.has(stage, "ledger.jsonl") {
                continue;
            }
            let text = self.read(Stage::Cost, stage, "ledger.jsonl")?;
            let ledger = CostLedger::from_jsonl(&text).map_err(|e| io_err(&self.stage_path(stage, "ledger.jsonl"), e))?;
            per_stage.insert(stage.as_str(), ledger.total());
            all.extend(&ledger);
        }
        let report = all.report();
        let mut out = StageOutput::new(Stage::Cost);
        out.put("report.txt", report.as_str());
        out.put("ledger.jsonl", all.to_jsonl());
        let manifest = out.commit(
            &self.out,
            json!({
                "total": all.total(),
                "per_stage": per_stage,
                "by_kind": all.totals_by_kind().into_iter().map(|(k, t)| (k.as_str(), t)).collect::<BTreeMap<_, _>>(),
            }),
        )?;
        Ok((manifest, report))
    }
}

/// Tags gold tokens from a predicted sample over the detokenized sentence:
/// a token belongs to an entity when their character ranges overlap.
fn project(sample: &NerSample, offsets: &[std::ops::Range<usize>], tokens: &[String]) -> TokenizedSample {
    let mut tags = vec![Tag::Outside; offsets.len()];
    for ann in &sample.annotations {
        let Some(range) = sample.resolve(ann) else { continue };
        let hit: Vec<usize> = (0..offsets.len())
            .filter(|&i| offsets[i].start < range.end && range.start < offsets[i].end)
            .collect();
        if hit.iter().any(|&i| tags[i] != Tag::Outside) {
            continue;
        }
        for (k, &i) in hit.iter().enumerate() {
            tags[i] = if k == 0 {
                Tag::Begin(ann.class_name.clone())
            } else {
                Tag::Inside(ann.class_name.clone())
            };
        }
    }
    TokenizedSample {
        tokens: tokens.to_vec(),
        tags,
    }
}
