use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use thiserror::Error;

use super::{AttributeDimension, AttributePair, AttributePool, DiversityConfig, EntityPool, EntityPoolVariant};

/// Per-class entity draws are uniform on `0..=MAX_ENTITIES_PER_CLASS`.
pub const MAX_ENTITIES_PER_CLASS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiversityError {
    #[error("attribute pool has no topic dimension")]
    EmptyPool,
    #[error("topic dimension has no values")]
    EmptyTopic,
    #[error("expected a {expected:?} entity pool")]
    WrongPoolVariant { expected: EntityPoolVariant },
}

/// Non-fatal sampling conditions, surfaced to the caller for logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiversityWarning {
    /// The latent pool has no entities for the drawn topic; the config
    /// degrades to attribute requirements only.
    MissingTopicEntities { topic: String },
}

impl std::fmt::Display for DiversityWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiversityWarning::MissingTopicEntities { topic } => {
                write!(f, "latent entity pool has no entries for topic {topic:?}")
            }
        }
    }
}

fn pick_value<R: Rng + ?Sized>(dim: &AttributeDimension, rng: &mut R) -> Option<AttributePair> {
    dim.values.choose(rng).map(|v| AttributePair {
        dimension: dim.name.clone(),
        value: v.clone(),
    })
}

/// Samples attribute requirements: the topic dimension always, every other
/// dimension independently with its probability. For a conflict group, one
/// Bernoulli draw with the summed member probability (capped at 1) decides
/// whether any member is included; the member is then chosen in proportion
/// to its probability. This keeps each member's marginal inclusion rate while
/// admitting at most one member per group.
pub fn sample_config_x<R: Rng + ?Sized>(
    pool: &AttributePool,
    rng: &mut R,
) -> Result<DiversityConfig, DiversityError> {
    let topic = pool.topic().ok_or(DiversityError::EmptyPool)?;
    let topic_pair = pick_value(topic, rng).ok_or(DiversityError::EmptyTopic)?;

    let mut chosen: HashSet<&str> = HashSet::new();
    let mut groups_done: HashSet<&str> = HashSet::new();
    for dim in pool.dimensions.iter().filter(|d| !d.topic) {
        match dim.conflict_group.as_deref() {
            None => {
                if rng.random_bool(dim.probability.clamp(0.0, 1.0)) {
                    chosen.insert(&dim.name);
                }
            }
            Some(group) => {
                if !groups_done.insert(group) {
                    continue;
                }
                let members: Vec<&AttributeDimension> = pool
                    .dimensions
                    .iter()
                    .filter(|d| !d.topic && d.conflict_group.as_deref() == Some(group))
                    .collect();
                let total: f64 = members.iter().map(|d| d.probability.max(0.0)).sum();
                if total <= 0.0 || !rng.random_bool(total.min(1.0)) {
                    continue;
                }
                let mut u = rng.random::<f64>() * total;
                let mut pick = members[members.len() - 1];
                for m in &members {
                    u -= m.probability.max(0.0);
                    if u < 0.0 {
                        pick = m;
                        break;
                    }
                }
                chosen.insert(&pick.name);
            }
        }
    }

    let mut x_pairs = vec![topic_pair.clone()];
    for dim in pool.dimensions.iter().filter(|d| !d.topic && chosen.contains(d.name.as_str())) {
        if let Some(pair) = pick_value(dim, rng) {
            x_pairs.push(pair);
        }
    }
    Ok(DiversityConfig {
        x_pairs,
        y_entities: Vec::new(),
        topic_value: Some(topic_pair.value),
    })
}

/// What [`sample_entities_traced`] drew, for statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityDraw {
    /// `(class, K_c)` in class order, before clamping to the list size.
    pub per_class: Vec<(String, usize)>,
    pub union_size: usize,
    /// Per-entity keep probability used for thinning.
    pub keep_probability: f64,
    pub kept: Vec<String>,
}

/// Samples entity-inclusion requirements from a class -> entities view.
///
/// For each class draw `K_c` uniformly from `{0, 1, 2, 3}` and take that
/// many distinct entities (clamped to the list size). The union of all draws
/// is thinned with keep probability `min(1, expected / |union|)`, so the
/// expected kept count is `min(expected, |union|)`. The result is shuffled.
pub fn sample_entities<R: Rng + ?Sized>(
    view: &BTreeMap<String, Vec<String>>,
    rng: &mut R,
    expected_count: f64,
) -> Vec<String> {
    sample_entities_traced(view, rng, expected_count).kept
}

pub fn sample_entities_traced<R: Rng + ?Sized>(
    view: &BTreeMap<String, Vec<String>>,
    rng: &mut R,
    expected_count: f64,
) -> EntityDraw {
    let mut per_class = Vec::with_capacity(view.len());
    let mut union: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (class, entities) in view {
        let k = rng.random_range(0..=MAX_ENTITIES_PER_CLASS);
        per_class.push((class.clone(), k));
        let mut list = entities.clone();
        let take = k.min(list.len());
        let (picked, _) = list.partial_shuffle(rng, take);
        for e in picked.iter() {
            if seen.insert(e.clone()) {
                union.push(e.clone());
            }
        }
    }
    let keep_probability = if union.is_empty() {
        0.0
    } else {
        (expected_count.max(0.0) / union.len() as f64).min(1.0)
    };
    let mut kept: Vec<String> = union
        .iter()
        .filter(|_| rng.random_bool(keep_probability))
        .cloned()
        .collect();
    kept.shuffle(rng);
    EntityDraw {
        per_class,
        union_size: union.len(),
        keep_probability,
        kept,
    }
}

/// Entity requirements from a vanilla pool, no attribute requirements.
pub fn sample_config_y_vanilla<R: Rng + ?Sized>(
    pool: &EntityPool,
    rng: &mut R,
    expected_count: f64,
) -> Result<DiversityConfig, DiversityError> {
    if pool.variant != EntityPoolVariant::Vanilla {
        return Err(DiversityError::WrongPoolVariant {
            expected: EntityPoolVariant::Vanilla,
        });
    }
    Ok(DiversityConfig {
        x_pairs: Vec::new(),
        y_entities: sample_entities(&pool.vanilla, rng, expected_count),
        topic_value: None,
    })
}

/// Entity requirements from the latent pool of a uniformly drawn topic.
/// Only the entity clause is rendered; the topic is recorded.
pub fn sample_config_y_latent<R: Rng + ?Sized>(
    attrs: &AttributePool,
    pool: &EntityPool,
    rng: &mut R,
    expected_count: f64,
) -> Result<(DiversityConfig, Option<DiversityWarning>), DiversityError> {
    if pool.variant != EntityPoolVariant::Latent {
        return Err(DiversityError::WrongPoolVariant {
            expected: EntityPoolVariant::Latent,
        });
    }
    let topic = attrs.topic().ok_or(DiversityError::EmptyPool)?;
    let value = topic.values.choose(rng).ok_or(DiversityError::EmptyTopic)?.clone();
    let (y_entities, warning) = latent_entities(pool, &value, rng, expected_count);
    Ok((
        DiversityConfig {
            x_pairs: Vec::new(),
            y_entities,
            topic_value: Some(value),
        },
        warning,
    ))
}

/// Attribute requirements plus entity requirements drawn from the latent
/// pool of the sampled topic, so both requirement kinds agree.
pub fn sample_config_xy<R: Rng + ?Sized>(
    attrs: &AttributePool,
    pool: &EntityPool,
    rng: &mut R,
    expected_count: f64,
) -> Result<(DiversityConfig, Option<DiversityWarning>), DiversityError> {
    if pool.variant != EntityPoolVariant::Latent {
        return Err(DiversityError::WrongPoolVariant {
            expected: EntityPoolVariant::Latent,
        });
    }
    let mut config = sample_config_x(attrs, rng)?;
    let topic = config.topic_value.clone().expect("x configs carry a topic");
    let (y_entities, warning) = latent_entities(pool, &topic, rng, expected_count);
    config.y_entities = y_entities;
    Ok((config, warning))
}

fn latent_entities<R: Rng + ?Sized>(
    pool: &EntityPool,
    topic: &str,
    rng: &mut R,
    expected_count: f64,
) -> (Vec<String>, Option<DiversityWarning>) {
    match pool.latent.get(topic) {
        Some(view) if view.values().any(|l| !l.is_empty()) => {
            (sample_entities(view, rng, expected_count), None)
        }
        _ => {
            let warning = DiversityWarning::MissingTopicEntities {
                topic: topic.to_string(),
            };
            log::warn!("{warning}");
            (Vec::new(), Some(warning))
        }
    }
}
