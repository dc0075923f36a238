//! Diversity requirements for sample-generation prompts.
//!
//! Two kinds of requirement are sampled: attribute `(dimension, value)`
//! pairs that steer what the sentence is about ("Diversify X"), and lists of
//! named entities the sentence must mention ("Diversify Y"). The entity
//! pool is either per class (vanilla) or per `(topic, class)` (latent);
//! the latent pool couples both kinds through the always-sampled topic
//! dimension.
//!
//! Samplers take any [`rand::Rng`]; the pipeline feeds them a seeded
//! ChaCha generator so draws are reproducible.

mod pool;
mod render;
mod sample;

pub use pool::{AttributeDimension, AttributePool, EntityPool, EntityPoolVariant, PoolError, PoolFile};
pub use render::{render_requirement, RequirementTemplates};
pub use sample::{
    sample_config_x, sample_config_xy, sample_config_y_latent, sample_config_y_vanilla,
    sample_entities, sample_entities_traced, DiversityError, DiversityWarning, EntityDraw,
    MAX_ENTITIES_PER_CLASS,
};

use serde::{Deserialize, Serialize};

/// One sampled `(dimension, value)` requirement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributePair {
    pub dimension: String,
    pub value: String,
}

/// A sampled bundle of requirements for one prompt.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityConfig {
    #[serde(default)]
    pub x_pairs: Vec<AttributePair>,
    /// Entities to include. Deliberately carries no class labels.
    #[serde(default)]
    pub y_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_value: Option<String>,
}

impl DiversityConfig {
    pub fn is_empty(&self) -> bool {
        self.x_pairs.is_empty() && self.y_entities.is_empty()
    }
}
