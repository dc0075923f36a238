//! Pool file format (TOML).
//!
//! ```toml
//! [[dimensions]]
//! name = "news topic"
//! topic = true                  # exactly one dimension; always sampled
//! values = ["politics", "sports"]
//!
//! [[dimensions]]
//! name = "writing style"
//! probability = 0.4
//! conflict_group = "tone"       # optional; at most one member per draw
//! generate = 8                  # values to request when `values` is empty
//! examples = ["op-eds", "feature stories"]
//!
//! [entities]
//! variant = "latent"            # or "vanilla"
//! generate = 15                 # entities to request per list
//! [entities.vanilla]
//! person = ["Angela Merkel"]
//! [entities.latent.politics]
//! person = ["Joe Biden"]
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("reading pool file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing pool file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("pool must have exactly one topic dimension, found {0}")]
    TopicCount(usize),
    #[error("dimension {0:?} has no values")]
    EmptyDimension(String),
    #[error("dimension {0:?} has duplicate values")]
    DuplicateValues(String),
    #[error("dimension {name:?} has probability {probability} outside [0, 1]")]
    BadProbability { name: String, probability: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDimension {
    pub name: String,
    #[serde(default)]
    pub values: Vec<String>,
    /// Inclusion probability; ignored for the topic dimension.
    #[serde(default)]
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_group: Option<String>,
    #[serde(default)]
    pub topic: bool,
    /// Number of values to request from the model when `values` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
}

impl AttributeDimension {
    pub fn new(name: &str, probability: f64, values: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
            probability,
            conflict_group: None,
            topic: false,
            generate: None,
            examples: Vec::new(),
        }
    }

    pub fn topic(name: &str, values: &[&str]) -> Self {
        Self {
            topic: true,
            ..Self::new(name, 1.0, values)
        }
    }

    pub fn in_group(mut self, group: &str) -> Self {
        self.conflict_group = Some(group.to_string());
        self
    }
}

/// Attribute dimensions for one dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributePool {
    pub dimensions: Vec<AttributeDimension>,
}

impl AttributePool {
    pub fn new(dimensions: Vec<AttributeDimension>) -> Self {
        Self { dimensions }
    }

    pub fn topic(&self) -> Option<&AttributeDimension> {
        self.dimensions.iter().find(|d| d.topic)
    }

    /// Checks that the pool is ready to sample from.
    pub fn check(&self) -> Result<(), PoolError> {
        let topics = self.dimensions.iter().filter(|d| d.topic).count();
        if topics != 1 {
            return Err(PoolError::TopicCount(topics));
        }
        for d in &self.dimensions {
            if d.values.is_empty() {
                return Err(PoolError::EmptyDimension(d.name.clone()));
            }
            let unique: HashSet<_> = d.values.iter().collect();
            if unique.len() != d.values.len() {
                return Err(PoolError::DuplicateValues(d.name.clone()));
            }
            if !d.topic && !(0.0..=1.0).contains(&d.probability) {
                return Err(PoolError::BadProbability {
                    name: d.name.clone(),
                    probability: d.probability,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityPoolVariant {
    #[default]
    Vanilla,
    Latent,
}

/// Named entities to draw inclusion requirements from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityPool {
    #[serde(default)]
    pub variant: EntityPoolVariant,
    /// Number of entities to request per list when generating the pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<usize>,
    /// class -> entities
    #[serde(default)]
    pub vanilla: BTreeMap<String, Vec<String>>,
    /// topic -> class -> entities
    #[serde(default)]
    pub latent: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

impl EntityPool {
    /// The class -> entities view to sample from for `topic` (latent) or the
    /// whole vanilla pool.
    pub fn view(&self, topic: Option<&str>) -> Option<&BTreeMap<String, Vec<String>>> {
        match (self.variant, topic) {
            (EntityPoolVariant::Vanilla, _) => Some(&self.vanilla),
            (EntityPoolVariant::Latent, Some(t)) => self.latent.get(t),
            (EntityPoolVariant::Latent, None) => None,
        }
    }

    /// Removes duplicate entities within each list, keeping first occurrences.
    pub fn dedup_lists(&mut self) {
        fn dd(list: &mut Vec<String>) {
            let mut seen = HashSet::new();
            list.retain(|e| seen.insert(e.clone()));
        }
        self.vanilla.values_mut().for_each(dd);
        self.latent.values_mut().flat_map(|m| m.values_mut()).for_each(dd);
    }
}

/// On-disk pool file: attribute dimensions plus an optional entity pool.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    #[serde(default)]
    pub dimensions: Vec<AttributeDimension>,
    #[serde(default)]
    pub entities: Option<EntityPool>,
}

impl PoolFile {
    pub fn from_toml_str(text: &str) -> Result<Self, PoolError> {
        let mut pf: PoolFile = toml::from_str(text)?;
        if let Some(e) = pf.entities.as_mut() {
            e.dedup_lists();
        }
        Ok(pf)
    }

    pub fn load(path: &Path) -> Result<Self, PoolError> {
        let text = std::fs::read_to_string(path).map_err(|source| PoolError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn attribute_pool(&self) -> AttributePool {
        AttributePool::new(self.dimensions.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let text = r#"
[[dimensions]]
name = "news topic"
topic = true
values = ["politics", "sports"]

[[dimensions]]
name = "writing style"
probability = 0.4
conflict_group = "tone"
generate = 8
examples = ["op-eds"]

[entities]
variant = "latent"
generate = 15
[entities.latent.politics]
person = ["Joe Biden", "Joe Biden", "Kamala Harris"]
"#;
        let pf = PoolFile::from_toml_str(text).unwrap();
        assert_eq!(pf.dimensions.len(), 2);
        assert_eq!(pf.dimensions[1].generate, Some(8));
        let e = pf.entities.unwrap();
        assert_eq!(e.variant, EntityPoolVariant::Latent);
        assert_eq!(e.latent["politics"]["person"], ["Joe Biden", "Kamala Harris"]);
        // values for writing style are still pending generation
        assert!(matches!(pf.dimensions.len(), 2));
    }

    #[test]
    fn check_requires_single_topic() {
        let pool = AttributePool::new(vec![AttributeDimension::new("style", 0.4, &["a"])]);
        assert!(matches!(pool.check(), Err(PoolError::TopicCount(0))));
        let pool = AttributePool::new(vec![
            AttributeDimension::topic("topic", &["a"]),
            AttributeDimension::new("style", 0.4, &[]),
        ]);
        assert!(matches!(pool.check(), Err(PoolError::EmptyDimension(_))));
    }

    #[test]
    fn view_by_variant() {
        let mut pool = EntityPool::default();
        pool.vanilla.insert("person".into(), vec!["A".into()]);
        assert!(pool.view(None).is_some());
        pool.variant = EntityPoolVariant::Latent;
        assert!(pool.view(None).is_none());
        assert!(pool.view(Some("x")).is_none());
    }
}
