use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate, NerSample, RejectReason};

#[derive(Debug, Error)]
pub enum TaskSpecError {
    #[error("reading task spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing task spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("entity class names must be non-empty")]
    EmptyClassName,
    #[error("duplicate entity class {0:?}")]
    DuplicateClass(String),
    #[error("expected between 1 and 9 demo samples, found {0}")]
    DemoCount(usize),
    #[error("demo {index} is invalid: {reason}")]
    InvalidDemo { index: usize, reason: RejectReason },
    #[error("include_negative_demo is set but no demo has zero annotations")]
    MissingNegativeDemo,
    #[error("expected_entity_requirement must be a nonnegative number, got {0}")]
    BadExpectation(f64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityClass {
    pub name: String,
    #[serde(default)]
    pub definition: String,
}

impl EntityClass {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            definition: String::new(),
        }
    }
}

/// Everything known about the target dataset before generation starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Brief description of the task domain, e.g. "news articles from Reuters".
    pub domain_description: String,
    /// Who the model should pretend to be, e.g. "a news writer".
    #[serde(default)]
    pub persona: String,
    /// What a single sample is, e.g. "news stories". Defaults to the domain
    /// description when empty.
    #[serde(default)]
    pub sample_description: String,
    pub classes: Vec<EntityClass>,
    #[serde(default)]
    pub demos: Vec<NerSample>,
    #[serde(default)]
    pub include_negative_demo: bool,
    #[serde(default)]
    pub lowercase_outputs: bool,
    #[serde(default = "default_expected_entities")]
    pub expected_entity_requirement: f64,
}

fn default_expected_entities() -> f64 {
    1.5
}

impl TaskSpec {
    /// A spec with no demos and default flags.
    pub fn new(domain_description: impl Into<String>, classes: Vec<EntityClass>) -> Self {
        Self {
            domain_description: domain_description.into(),
            persona: String::new(),
            sample_description: String::new(),
            classes,
            demos: Vec::new(),
            include_negative_demo: false,
            lowercase_outputs: false,
            expected_entity_requirement: default_expected_entities(),
        }
    }

    #[cfg(test)]
    pub(crate) fn for_tests(classes: Vec<EntityClass>) -> Self {
        Self::new("test sentences", classes)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TaskSpecError> {
        let spec: TaskSpec = toml::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, TaskSpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaskSpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Checks the task invariants: unique non-empty class names, 1..=9 valid
    /// demos, a negative demo when requested.
    pub fn check(&self) -> Result<(), TaskSpecError> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            if c.name.trim().is_empty() {
                return Err(TaskSpecError::EmptyClassName);
            }
            if !seen.insert(c.name.as_str()) {
                return Err(TaskSpecError::DuplicateClass(c.name.clone()));
            }
        }
        if self.demos.is_empty() || self.demos.len() >= 10 {
            return Err(TaskSpecError::DemoCount(self.demos.len()));
        }
        for (index, demo) in self.demos.iter().enumerate() {
            validate(demo, self).map_err(|reason| TaskSpecError::InvalidDemo { index, reason })?;
        }
        if self.include_negative_demo && !self.demos.iter().any(NerSample::is_negative) {
            return Err(TaskSpecError::MissingNegativeDemo);
        }
        if self.expected_entity_requirement.is_nan() || self.expected_entity_requirement < 0.0 {
            return Err(TaskSpecError::BadExpectation(self.expected_entity_requirement));
        }
        Ok(())
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.classes.iter().any(|c| c.name == name)
    }

    /// Maps a free-form type label onto a class name, ignoring case and
    /// surrounding whitespace.
    pub fn canonical_class(&self, label: &str) -> Option<&str> {
        let label = label.trim().to_lowercase();
        self.classes
            .iter()
            .find(|c| c.name.to_lowercase() == label)
            .map(|c| c.name.as_str())
    }

    pub fn sample_description(&self) -> &str {
        if self.sample_description.is_empty() {
            &self.domain_description
        } else {
            &self.sample_description
        }
    }

    pub fn persona(&self) -> &str {
        if self.persona.is_empty() {
            &self.domain_description
        } else {
            &self.persona
        }
    }
}
