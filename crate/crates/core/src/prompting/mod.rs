//! Prompt rendering for every model call the pipeline makes.
//!
//! Wording lives in text templates (see [`TemplateSet`]) so a dataset can
//! override any prompt without a rebuild; this module only decides what
//! goes into each placeholder. Rendering is a pure function of its inputs.

mod template;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use template::{Template, TemplateError, Vars};

use crate::diversity::{AttributeDimension, RequirementTemplates};
use crate::parser::render_natural_pair;
use crate::schema::{Annotation, NerSample, TaskSpec};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("template {name}: placeholder {{{placeholder}}} is not supported")]
    UnsupportedPlaceholder { name: String, placeholder: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("correction batch mixes classes: expected {expected:?}, found {found:?}")]
    MixedClassBatch { expected: String, found: String },
    #[error("correction batch has {size} items, limit is {limit}")]
    BatchTooLarge { size: usize, limit: usize },
    #[error("samples per prompt must be at least 1")]
    ZeroSamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    AttrDim,
    AttrValue,
    EntityPoolGen,
    SampleGen,
    Correction,
    FewShotIcl,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// A rendered prompt plus what it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PromptKind,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl PromptBundle {
    fn single(kind: PromptKind, content: String, metadata: serde_json::Value) -> Self {
        Self {
            kind,
            messages: vec![Message::user(content)],
            metadata,
        }
    }

    /// Concatenated message contents.
    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

macro_rules! template_set {
    ($( $field:ident : [$($ph:literal),*] ),* $(,)?) => {
        /// Every prompt template, loaded from the built-in defaults and
        /// optionally overridden file by file from a directory containing
        /// `<name>.txt`. One trailing newline is stripped from each file.
        #[derive(Clone, Debug)]
        pub struct TemplateSet {
            $(pub $field: Template,)*
        }

        impl TemplateSet {
            const NAMES: &'static [(&'static str, &'static [&'static str])] = &[
                $((stringify!($field), &[$($ph),*]),)*
            ];

            fn from_sources(mut source: impl FnMut(&str) -> Result<String, PromptError>) -> Result<Self, PromptError> {
                Ok(Self {
                    $($field: {
                        let name = stringify!($field);
                        let text = source(name)?;
                        let text = text.strip_suffix('\n').unwrap_or(&text);
                        let t = Template::parse(name, text)?;
                        let allowed: &[&str] = &[$($ph),*];
                        if let Some(bad) = t.placeholders().into_iter().find(|p| !allowed.contains(p)) {
                            return Err(PromptError::UnsupportedPlaceholder {
                                name: name.to_string(),
                                placeholder: bad.to_string(),
                            });
                        }
                        t
                    },)*
                })
            }
        }
    };
}

template_set! {
    sample: ["persona", "count", "sample_description", "domain_description", "class_list", "class_definitions", "negative_clause", "demos", "requirement"],
    negative_clause: [],
    requirement_header: ["sample_description"],
    requirement_pair: ["index", "dimension", "value", "sample_description"],
    requirement_entities: ["index", "entities", "sample_description"],
    attr_dim: ["sample_description", "domain_description", "example_attributes"],
    attr_value: ["persona", "count", "dimension", "sample_description", "examples_clause"],
    attr_value_examples: ["examples"],
    entity: ["persona", "count", "sample_description", "class"],
    latent_persona: ["persona", "topic"],
    correction: ["class", "class_list", "class_instruction", "demos", "batch"],
    correction_item: ["index", "sentence", "span"],
    correction_demo: ["index", "sentence", "span", "answer"],
    icl: ["class_list", "negative_clause", "demos", "sentence"],
}

fn builtin(name: &str) -> &'static str {
    match name {
        "sample" => include_str!("../../templates/sample.txt"),
        "negative_clause" => include_str!("../../templates/negative_clause.txt"),
        "requirement_header" => include_str!("../../templates/requirement_header.txt"),
        "requirement_pair" => include_str!("../../templates/requirement_pair.txt"),
        "requirement_entities" => include_str!("../../templates/requirement_entities.txt"),
        "attr_dim" => include_str!("../../templates/attr_dim.txt"),
        "attr_value" => include_str!("../../templates/attr_value.txt"),
        "attr_value_examples" => include_str!("../../templates/attr_value_examples.txt"),
        "entity" => include_str!("../../templates/entity.txt"),
        "latent_persona" => include_str!("../../templates/latent_persona.txt"),
        "correction" => include_str!("../../templates/correction.txt"),
        "correction_item" => include_str!("../../templates/correction_item.txt"),
        "correction_demo" => include_str!("../../templates/correction_demo.txt"),
        "icl" => include_str!("../../templates/icl.txt"),
        other => unreachable!("no built-in template {other}"),
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_sources(|name| Ok(builtin(name).to_string())).expect("built-in templates are valid")
    }
}

impl TemplateSet {
    /// Built-in templates, overridden by any `<name>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::from_sources(|name| {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
            } else {
                Ok(builtin(name).to_string())
            }
        })
    }

    pub fn template_names() -> impl Iterator<Item = &'static str> {
        Self::NAMES.iter().map(|(n, _)| *n)
    }

    pub fn requirement_templates(&self) -> RequirementTemplates {
        RequirementTemplates {
            header: self.requirement_header.clone(),
            pair: self.requirement_pair.clone(),
            entities: self.requirement_entities.clone(),
        }
    }
}

fn class_list(spec: &TaskSpec) -> String {
    format!("[{}]", spec.class_names().collect::<Vec<_>>().join(", "))
}

fn class_definitions(spec: &TaskSpec) -> String {
    let defs: Vec<String> = spec
        .classes
        .iter()
        .filter(|c| !c.definition.trim().is_empty())
        .map(|c| format!("\n- {}: {}", c.name, c.definition.trim()))
        .collect();
    if defs.is_empty() {
        String::new()
    } else {
        format!("\nEntity type definitions:{}", defs.concat())
    }
}

fn demo_blocks(spec: &TaskSpec, numbered: bool) -> String {
    let blocks: Vec<String> = spec
        .demos
        .iter()
        .enumerate()
        .map(|(i, d)| render_natural_pair(d, numbered.then_some(i + 1)))
        .collect();
    join_blocks(&blocks)
}

fn join_blocks(blocks: &[String]) -> String {
    if blocks.is_empty() {
        String::new()
    } else {
        format!("{}\n", blocks.join("\n\n"))
    }
}

/// Sample-generation prompt asking for `count` samples in natural-pair
/// format, with the requirement block appended after the demos.
pub fn build_sample_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    requirement: &str,
    count: usize,
) -> Result<PromptBundle, PromptError> {
    if count == 0 {
        return Err(PromptError::ZeroSamples);
    }
    let negative = if spec.include_negative_demo {
        templates.negative_clause.render(&Vars::new())?
    } else {
        String::new()
    };
    let text = templates.sample.render(
        &Vars::new()
            .with("persona", spec.persona())
            .with("count", count.to_string())
            .with("sample_description", spec.sample_description())
            .with("domain_description", spec.domain_description.as_str())
            .with("class_list", class_list(spec))
            .with("class_definitions", class_definitions(spec))
            .with("negative_clause", negative)
            .with("demos", demo_blocks(spec, true))
            .with("requirement", requirement),
    )?;
    Ok(PromptBundle::single(
        PromptKind::SampleGen,
        text,
        serde_json::json!({ "count": count, "demos": spec.demos.len() }),
    ))
}

pub fn build_attr_dim_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    example_attributes: &[String],
) -> Result<PromptBundle, PromptError> {
    let text = templates.attr_dim.render(
        &Vars::new()
            .with("sample_description", spec.sample_description())
            .with("domain_description", spec.domain_description.as_str())
            .with("example_attributes", example_attributes.join(", ")),
    )?;
    Ok(PromptBundle::single(PromptKind::AttrDim, text, serde_json::Value::Null))
}

pub fn build_attr_value_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    dimension: &str,
    count: usize,
    seed_examples: &[String],
) -> Result<PromptBundle, PromptError> {
    let examples_clause = if seed_examples.is_empty() {
        String::new()
    } else {
        templates
            .attr_value_examples
            .render(&Vars::new().with("examples", seed_examples.join(", ")))?
    };
    let text = templates.attr_value.render(
        &Vars::new()
            .with("persona", spec.persona())
            .with("count", count.to_string())
            .with("dimension", dimension)
            .with("sample_description", spec.sample_description())
            .with("examples_clause", examples_clause),
    )?;
    Ok(PromptBundle::single(
        PromptKind::AttrValue,
        text,
        serde_json::json!({ "dimension": dimension, "count": count }),
    ))
}

/// Convenience wrapper taking the dimension's own generation hints.
pub fn build_attr_value_prompt_for(
    templates: &TemplateSet,
    spec: &TaskSpec,
    dim: &AttributeDimension,
    default_count: usize,
) -> Result<PromptBundle, PromptError> {
    build_attr_value_prompt(templates, spec, &dim.name, dim.generate.unwrap_or(default_count), &dim.examples)
}

/// Entity-pool prompt. With a topic, the persona is narrowed to the topic
/// (latent pool); without one the render is the vanilla prompt.
pub fn build_entity_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    class: &str,
    count: usize,
    topic: Option<&str>,
) -> Result<PromptBundle, PromptError> {
    let persona = match topic {
        Some(t) => templates
            .latent_persona
            .render(&Vars::new().with("persona", spec.persona()).with("topic", t))?,
        None => spec.persona().to_string(),
    };
    let text = templates.entity.render(
        &Vars::new()
            .with("persona", persona)
            .with("count", count.to_string())
            .with("sample_description", spec.sample_description())
            .with("class", class),
    )?;
    Ok(PromptBundle::single(
        PromptKind::EntityPoolGen,
        text,
        serde_json::json!({ "class": class, "count": count, "topic": topic }),
    ))
}

/// A worked correction example shown to the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionDemo {
    pub sentence: String,
    pub span: String,
    pub answer: String,
}

/// One item of a correction batch: a sentence and one of its annotations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionItem {
    pub sentence: String,
    pub annotation: Annotation,
}

/// Batched self-correction prompt for annotations that share `class`.
pub fn build_correction_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    class: &str,
    instruction: &str,
    demos: &[CorrectionDemo],
    batch: &[CorrectionItem],
    max_batch: usize,
) -> Result<PromptBundle, PromptError> {
    if batch.len() > max_batch {
        return Err(PromptError::BatchTooLarge {
            size: batch.len(),
            limit: max_batch,
        });
    }
    if let Some(bad) = batch.iter().find(|it| it.annotation.class_name != class) {
        return Err(PromptError::MixedClassBatch {
            expected: class.to_string(),
            found: bad.annotation.class_name.clone(),
        });
    }
    let demo_text: Vec<String> = demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            templates.correction_demo.render(
                &Vars::new()
                    .with("index", (i + 1).to_string())
                    .with("sentence", d.sentence.as_str())
                    .with("span", d.span.as_str())
                    .with("answer", d.answer.as_str()),
            )
        })
        .collect::<Result<_, _>>()?;
    let items: Vec<String> = batch
        .iter()
        .enumerate()
        .map(|(i, it)| {
            templates.correction_item.render(
                &Vars::new()
                    .with("index", (i + 1).to_string())
                    .with("sentence", it.sentence.as_str())
                    .with("span", it.annotation.span.as_str()),
            )
        })
        .collect::<Result<_, _>>()?;
    let instruction = instruction.trim();
    let class_instruction = if instruction.is_empty() {
        String::new()
    } else {
        format!("{instruction}\n")
    };
    let text = templates.correction.render(
        &Vars::new()
            .with("class", class)
            .with("class_list", class_list(spec))
            .with("class_instruction", class_instruction)
            .with("demos", join_blocks(&demo_text))
            .with("batch", items.join("\n\n")),
    )?;
    Ok(PromptBundle::single(
        PromptKind::Correction,
        text,
        serde_json::json!({ "class": class, "batch": batch.len() }),
    ))
}

/// Few-shot in-context prediction prompt for a single unlabeled sentence.
pub fn build_icl_prompt(
    templates: &TemplateSet,
    spec: &TaskSpec,
    demos: &[NerSample],
    sentence: &str,
) -> Result<PromptBundle, PromptError> {
    let negative = if demos.iter().any(NerSample::is_negative) {
        templates.negative_clause.render(&Vars::new())?
    } else {
        String::new()
    };
    let blocks: Vec<String> = demos.iter().map(|d| render_natural_pair(d, None)).collect();
    let text = templates.icl.render(
        &Vars::new()
            .with("class_list", class_list(spec))
            .with("negative_clause", negative)
            .with("demos", join_blocks(&blocks))
            .with("sentence", sentence),
    )?;
    Ok(PromptBundle::single(PromptKind::FewShotIcl, text, serde_json::Value::Null))
}
