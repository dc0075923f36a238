//! Pipeline configuration file.
//!
//! Relative paths are resolved against the directory holding the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::SelectionParams;
use crate::gateway::{HttpConfig, ModelPrice, PriceTable, RetryPolicy};
use crate::prompting::CorrectionDemo;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Simple,
    X,
    YVanilla,
    YLatent,
    Xy,
}

impl Variant {
    pub fn uses_attributes(self) -> bool {
        matches!(self, Variant::X | Variant::Xy | Variant::YLatent)
    }

    pub fn uses_entities(self) -> bool {
        matches!(self, Variant::YVanilla | Variant::YLatent | Variant::Xy)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    #[default]
    Replay,
    Record,
    /// Offline generator, for dry runs.
    Synthetic,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "record" => Ok(Self::Record),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown backend {other:?} (expected live, replay, record or synthetic)")),
        }
    }
}

/// Model id per stage; unset stages use `default`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Models {
    pub default: String,
    pub attrs: Option<String>,
    pub entities: Option<String>,
    pub generate: Option<String>,
    pub correction: Option<String>,
    pub prediction: Option<String>,
}

impl Default for Models {
    fn default() -> Self {
        Self {
            default: "gpt-3.5-turbo".into(),
            attrs: None,
            entities: None,
            generate: None,
            correction: None,
            prediction: None,
        }
    }
}

impl Models {
    fn pick<'a>(&'a self, o: &'a Option<String>) -> &'a str {
        o.as_deref().unwrap_or(&self.default)
    }
    pub fn attrs(&self) -> &str {
        self.pick(&self.attrs)
    }
    pub fn entities(&self) -> &str {
        self.pick(&self.entities)
    }
    pub fn generate(&self) -> &str {
        self.pick(&self.generate)
    }
    pub fn correction(&self) -> &str {
        self.pick(&self.correction)
    }
    pub fn prediction(&self) -> &str {
        self.pick(&self.prediction)
    }
}

/// Per-class correction instruction and demonstrations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassCorrection {
    pub instruction: String,
    pub demos: Vec<CorrectionDemo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: PathBuf,
    #[serde(default)]
    pub pools: Option<PathBuf>,
    /// Directory of template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    /// Replay store directory.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub variant: Variant,
    /// Samples requested per prompt; 50 for simple prompts, 3 otherwise.
    #[serde(default)]
    pub samples_per_prompt: Option<usize>,
    pub target_raw_samples: usize,
    #[serde(default = "default_max_requests")]
    pub max_requests: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub backend: BackendKind,
    /// What a record run asks on a store miss.
    #[serde(default = "default_record_source")]
    pub record_source: BackendKind,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_replication")]
    pub demo_replication: usize,
    #[serde(default = "default_batch")]
    pub correction_batch_size: usize,
    /// Values requested per attribute dimension without its own count.
    #[serde(default = "default_values")]
    pub attr_values_per_dimension: usize,
    /// Entities requested per class list without a pool-level count.
    #[serde(default = "default_entities")]
    pub entities_per_class: usize,
    /// Example dimensions for an optional attribute-dimension query.
    #[serde(default)]
    pub attr_dimension_examples: Vec<String>,
    #[serde(default)]
    pub models: Models,
    #[serde(default)]
    pub selection: SelectionParams,
    #[serde(default)]
    pub prices: BTreeMap<String, ModelPrice>,
    #[serde(default)]
    pub live: HttpConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub corrections: BTreeMap<String, ClassCorrection>,
}

fn default_max_requests() -> usize {
    1000
}
fn default_record_source() -> BackendKind {
    BackendKind::Live
}
fn default_concurrency() -> usize {
    4
}
fn default_replication() -> usize {
    5
}
fn default_batch() -> usize {
    3
}
fn default_values() -> usize {
    10
}
fn default_entities() -> usize {
    20
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.task);
        for p in [&mut self.pools, &mut self.templates, &mut self.fixtures].into_iter().flatten() {
            join(p);
        }
    }

    pub fn samples_per_prompt(&self) -> usize {
        self.samples_per_prompt.unwrap_or(match self.variant {
            Variant::Simple => 50,
            _ => 3,
        })
    }

    /// Built-in prices with the configured ones merged over them.
    pub fn price_table(&self) -> PriceTable {
        let mut table = PriceTable::default();
        table.extend(&PriceTable(self.prices.clone()));
        table
    }

    /// Checks everything that does not depend on stage outputs.
    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !self.task.is_file() {
            return invalid(format!("task file {} does not exist", self.task.display()));
        }
        for (name, p) in [("pools", &self.pools), ("templates", &self.templates)] {
            if let Some(p) = p {
                if !p.exists() {
                    return invalid(format!("{name} path {} does not exist", p.display()));
                }
            }
        }
        if (self.variant.uses_attributes() || self.variant.uses_entities()) && self.pools.is_none() {
            return invalid(format!("variant {:?} needs a pools file", self.variant));
        }
        let replaying = matches!(self.backend, BackendKind::Replay | BackendKind::Record);
        if replaying && self.fixtures.is_none() {
            return invalid("replay and record backends need a fixtures directory".into());
        }
        if self.backend == BackendKind::Replay {
            match &self.fixtures {
                Some(f) if f.is_dir() => {}
                Some(f) => return invalid(format!("fixtures directory {} does not exist", f.display())),
                None => unreachable!(),
            }
            if self.seed.is_none() {
                return invalid("replay runs need a seed".into());
            }
        }
        if matches!(self.record_source, BackendKind::Replay | BackendKind::Record) {
            return invalid("record_source must be live or synthetic".into());
        }
        if self.samples_per_prompt() == 0 {
            return invalid("samples_per_prompt must be positive".into());
        }
        if self.concurrency == 0 || self.correction_batch_size == 0 || self.demo_replication == 0 {
            return invalid("concurrency, correction_batch_size and demo_replication must be positive".into());
        }
        let s = &self.selection;
        if s.threshold.is_nan() || s.threshold > 0.0 || !(0.0..=1.0).contains(&s.cap_fraction) {
            return invalid("selection threshold must be <= 0 and cap_fraction in [0, 1]".into());
        }
        let prices = self.price_table();
        for m in [
            self.models.attrs(),
            self.models.entities(),
            self.models.generate(),
            self.models.correction(),
            self.models.prediction(),
        ] {
            if prices.get(m).is_err() {
                return invalid(format!("no price for model {m:?}"));
            }
        }
        for (class, c) in &self.corrections {
            if c.demos.len() > 6 {
                log::warn!("correction demos for {class}: {} given, at most 6 recommended", c.demos.len());
            }
        }
        Ok(())
    }
}
