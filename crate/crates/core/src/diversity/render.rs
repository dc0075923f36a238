use super::DiversityConfig;
use crate::prompting::{Template, TemplateError, Vars};

/// Templates for the requirement block appended to a generation prompt.
///
/// - `header`: `{sample_description}`
/// - `pair`: `{index}`, `{dimension}`, `{value}`, `{sample_description}`
/// - `entities`: `{index}`, `{entities}` (quoted, comma separated),
///   `{sample_description}`
#[derive(Clone, Debug)]
pub struct RequirementTemplates {
    pub header: Template,
    pub pair: Template,
    pub entities: Template,
}

/// Renders a config into requirement text. Each `(dimension, value)` pair and
/// the entity clause become numbered lines under the header. The entity
/// clause never names entity classes. An empty config renders as "".
pub fn render_requirement(
    config: &DiversityConfig,
    templates: &RequirementTemplates,
    sample_description: &str,
) -> Result<String, TemplateError> {
    if config.is_empty() {
        return Ok(String::new());
    }
    let mut out = templates
        .header
        .render(&Vars::new().with("sample_description", sample_description))?;
    let mut index = 0;
    for pair in &config.x_pairs {
        index += 1;
        out.push_str(&templates.pair.render(
            &Vars::new()
                .with("index", index.to_string())
                .with("sample_description", sample_description)
                .with("dimension", pair.dimension.as_str())
                .with("value", pair.value.as_str()),
        )?);
    }
    if !config.y_entities.is_empty() {
        index += 1;
        let entities = config
            .y_entities
            .iter()
            .map(|e| format!("\"{e}\""))
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str(&templates.entities.render(
            &Vars::new()
                .with("index", index.to_string())
                .with("sample_description", sample_description)
                .with("entities", entities),
        )?);
    }
    Ok(out)
}
