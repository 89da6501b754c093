//! Per-dimension class distributions and location mentions attached to
//! posts through pluggable backends.

mod backend;
mod location;
mod remote;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Post, DISASTER_EVENT, NON_SUBEVENT_POST, SUBEVENT_POST, SUB_EVENT};
use crate::gateway::GatewayError;

pub use backend::{ClassifierBackend, GroundTruthBackend, Lexicon, LexiconBackend};
pub use location::{extract_locations, Completeness, Gazetteer, LocationContext, LocationMention, PlaceEntry, PlaceKind, ResolvedPlace};
pub use remote::{remote_classify, RemoteBackend};

/// Tolerance on the sum of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("classifying post `{post_id}` on `{dimension}` failed: {message}")]
    Backend { post_id: String, dimension: String, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid distribution: {0}")]
    Validation(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("gazetteer line {line}: {detail}")]
    Gazetteer { line: usize, detail: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Categorical,
    Entity,
}

/// One classification axis and its ordered class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSchema {
    pub name: String,
    pub classes: Vec<String>,
    pub kind: SchemaKind,
}

impl DimensionSchema {
    pub fn categorical(name: impl Into<String>, classes: &[&str]) -> Result<Self, ClassifyError> {
        Self::new(name, classes.iter().map(|c| c.to_string()).collect(), SchemaKind::Categorical)
    }

    pub fn new(name: impl Into<String>, classes: Vec<String>, kind: SchemaKind) -> Result<Self, ClassifyError> {
        let name = name.into();
        if kind == SchemaKind::Categorical {
            let mut distinct = classes.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.len() != classes.len() {
                return Err(ClassifyError::Schema(format!("`{name}` lists a class twice")));
            }
            if classes.len() < 2 {
                return Err(ClassifyError::Schema(format!("`{name}` needs at least two classes")));
            }
        }
        Ok(DimensionSchema { name, classes, kind })
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    /// The built-in schema for `name`, if there is one.
    pub fn builtin(name: &str) -> Option<Self> {
        let classes: &[&str] = match name {
            "content_type" => &["news", "opinion"],
            "sentiment" => &["positive", "negative"],
            "emotion" => &["anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust"],
            DISASTER_EVENT => &[
                "caution_and_advice",
                "sympathy_and_support",
                "requests_or_urgent_needs",
                "infrastructure_and_utility_damage",
                "rescue_volunteering_or_donation_effort",
                "not_humanitarian",
                "displaced_people_and_evacuations",
                "injured_or_dead_people",
                "missing_or_found_people",
            ],
            SUB_EVENT => &[SUBEVENT_POST, NON_SUBEVENT_POST],
            "stakeholder" => &["police", "ems", "firefighter", "media", "government_organization"],
            "location" => return Some(DimensionSchema { name: name.into(), classes: Vec::new(), kind: SchemaKind::Entity }),
            _ => return None,
        };
        Self::categorical(name, classes).ok()
    }

    pub fn builtin_names() -> [&'static str; 7] {
        ["content_type", "sentiment", "emotion", DISASTER_EVENT, SUB_EVENT, "stakeholder", "location"]
    }
}

/// A probability distribution over exactly a schema's classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub dimension: String,
    pub probs: BTreeMap<String, f64>,
}

impl ClassDistribution {
    /// Validates key set, non-negativity and unit sum.
    pub fn new(schema: &DimensionSchema, probs: BTreeMap<String, f64>) -> Result<Self, ClassifyError> {
        check_keys(schema, &probs)?;
        if let Some((c, p)) = probs.iter().find(|(_, p)| !(p.is_finite() && **p >= 0.0 && **p <= 1.0)) {
            return Err(ClassifyError::Validation(format!("probability for `{c}` is {p}")));
        }
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ClassifyError::Validation(format!("probabilities sum to {sum}")));
        }
        Ok(ClassDistribution { dimension: schema.name.clone(), probs })
    }

    /// Divides non-negative scores by their sum.
    pub fn normalized(schema: &DimensionSchema, scores: BTreeMap<String, f64>) -> Result<Self, ClassifyError> {
        check_keys(schema, &scores)?;
        if scores.values().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(ClassifyError::Validation("scores must be finite and non-negative".into()));
        }
        let sum: f64 = scores.values().sum();
        if sum <= 0.0 {
            return Err(ClassifyError::Validation("scores sum to zero".into()));
        }
        let probs = scores.into_iter().map(|(c, s)| (c, s / sum)).collect();
        Self::new(schema, probs)
    }

    /// Softmax of raw scores at the given temperature.
    pub fn softmax(schema: &DimensionSchema, scores: &BTreeMap<String, f64>, temperature: f64) -> Result<Self, ClassifyError> {
        check_keys(schema, scores)?;
        let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: BTreeMap<String, f64> =
            scores.iter().map(|(c, s)| (c.clone(), ((s - max) / temperature).exp())).collect();
        Self::normalized(schema, exp)
    }

    pub fn uniform(schema: &DimensionSchema) -> Self {
        let p = 1.0 / schema.classes.len() as f64;
        ClassDistribution { dimension: schema.name.clone(), probs: schema.classes.iter().map(|c| (c.clone(), p)).collect() }
    }

    pub fn one_hot(schema: &DimensionSchema, class: &str) -> Result<Self, ClassifyError> {
        if !schema.has_class(class) {
            return Err(ClassifyError::Validation(format!("`{class}` is not a class of `{}`", schema.name)));
        }
        let probs = schema.classes.iter().map(|c| (c.clone(), if c == class { 1.0 } else { 0.0 })).collect();
        Ok(ClassDistribution { dimension: schema.name.clone(), probs })
    }

    /// Highest-probability class; ties go to the lexicographically smallest
    /// class id.
    pub fn argmax(&self) -> (&str, f64) {
        let mut best: Option<(&str, f64)> = None;
        for (class, p) in &self.probs {
            if best.is_none_or(|(_, b)| *p > b) {
                best = Some((class, *p));
            }
        }
        best.unwrap_or(("", 0.0))
    }

    pub fn confidence(&self, class: &str) -> f64 {
        self.probs.get(class).copied().unwrap_or(0.0)
    }
}

fn check_keys(schema: &DimensionSchema, probs: &BTreeMap<String, f64>) -> Result<(), ClassifyError> {
    let keys_match = probs.len() == schema.classes.len() && schema.classes.iter().all(|c| probs.contains_key(c));
    if keys_match {
        Ok(())
    } else {
        Err(ClassifyError::Validation(format!(
            "keys {:?} do not match the classes of `{}`",
            probs.keys().collect::<Vec<_>>(),
            schema.name
        )))
    }
}

/// A post together with everything the classifiers attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedPost {
    pub post: Post,
    #[serde(default)]
    pub distributions: BTreeMap<String, ClassDistribution>,
    #[serde(default)]
    pub locations: Vec<LocationMention>,
    #[serde(default)]
    pub topic_id: Option<usize>,
}

impl EnrichedPost {
    pub fn new(post: Post) -> Self {
        EnrichedPost { post, distributions: BTreeMap::new(), locations: Vec::new(), topic_id: None }
    }

    pub fn id(&self) -> &str {
        &self.post.id
    }

    pub fn argmax(&self, dimension: &str) -> Option<&str> {
        self.distributions.get(dimension).map(|d| d.argmax().0)
    }

    pub fn distribution(&self, dimension: &str) -> Option<&ClassDistribution> {
        self.distributions.get(dimension)
    }
}

/// Classifies one post on one dimension.
pub fn classify_post(post: &Post, schema: &DimensionSchema, backend: &dyn ClassifierBackend) -> Result<ClassDistribution, ClassifyError> {
    let mut out = backend.classify_batch(&[post], schema)?;
    match (out.pop(), out.is_empty()) {
        (Some(d), true) => Ok(d),
        _ => Err(ClassifyError::Protocol(format!("backend `{}` returned the wrong number of results", backend.name()))),
    }
}

/// Schemas and backends by dimension name. Read-only once built.
#[derive(Clone)]
pub struct BackendRegistry {
    schemas: BTreeMap<String, DimensionSchema>,
    backends: BTreeMap<String, Arc<dyn ClassifierBackend>>,
    gazetteer: Option<Arc<Gazetteer>>,
    location_context: LocationContext,
    pub batch_size: usize,
    pub workers: usize,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl BackendRegistry {
    /// Registry knowing the built-in schemas and no backends.
    pub fn new() -> Self {
        let schemas = DimensionSchema::builtin_names()
            .iter()
            .filter_map(|n| DimensionSchema::builtin(n))
            .map(|s| (s.name.clone(), s))
            .collect();
        BackendRegistry {
            schemas,
            backends: BTreeMap::new(),
            gazetteer: None,
            location_context: LocationContext::default(),
            batch_size: 32,
            workers: 4,
        }
    }

    /// Adds or replaces a schema, e.g. an extended emotion class list.
    pub fn register_schema(&mut self, schema: DimensionSchema) -> &mut Self {
        self.schemas.insert(schema.name.clone(), schema);
        self
    }

    pub fn register(&mut self, dimension: impl Into<String>, backend: Arc<dyn ClassifierBackend>) -> &mut Self {
        self.backends.insert(dimension.into(), backend);
        self
    }

    pub fn set_gazetteer(&mut self, gazetteer: Arc<Gazetteer>, context: LocationContext) -> &mut Self {
        self.gazetteer = Some(gazetteer);
        self.location_context = context;
        self
    }

    pub fn schema(&self, dimension: &str) -> Option<&DimensionSchema> {
        self.schemas.get(dimension)
    }

    pub fn backend(&self, dimension: &str) -> Option<&Arc<dyn ClassifierBackend>> {
        self.backends.get(dimension)
    }

    pub fn gazetteer(&self) -> Option<&Gazetteer> {
        self.gazetteer.as_deref()
    }
}

/// Attaches one distribution per requested dimension to every post, plus
/// location mentions when a gazetteer is registered. Order is preserved.
pub fn enrich_corpus(corpus: &Corpus, dimensions: &[String], registry: &BackendRegistry) -> Result<Vec<EnrichedPost>, ClassifyError> {
    let mut plan = Vec::with_capacity(dimensions.len());
    for dim in dimensions {
        let schema = registry.schema(dim).ok_or_else(|| ClassifyError::Config(format!("no schema for dimension `{dim}`")))?;
        if schema.kind == SchemaKind::Entity {
            return Err(ClassifyError::Config(format!("`{dim}` is an entity dimension; register a gazetteer instead")));
        }
        let backend =
            registry.backend(dim).ok_or_else(|| ClassifyError::Config(format!("no backend registered for `{dim}`")))?;
        plan.push((schema, backend));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(registry.workers.max(1))
        .build()
        .map_err(|e| ClassifyError::Config(e.to_string()))?;
    let batch_size = registry.batch_size.max(1);
    let posts: Vec<&Post> = corpus.posts().iter().collect();

    let batches: Vec<Vec<EnrichedPost>> = pool.install(|| {
        posts
            .par_chunks(batch_size)
            .map(|batch| -> Result<Vec<EnrichedPost>, ClassifyError> {
                let mut enriched: Vec<EnrichedPost> = batch.iter().map(|p| EnrichedPost::new((*p).clone())).collect();
                for (schema, backend) in &plan {
                    let dists = backend.classify_batch(batch, schema).map_err(|e| match e {
                        e @ ClassifyError::Backend { .. } => e,
                        other => ClassifyError::Backend {
                            post_id: batch[0].id.clone(),
                            dimension: schema.name.clone(),
                            message: other.to_string(),
                        },
                    })?;
                    if dists.len() != batch.len() {
                        return Err(ClassifyError::Protocol(format!(
                            "backend `{}` returned {} results for {} posts",
                            backend.name(),
                            dists.len(),
                            batch.len()
                        )));
                    }
                    for (ep, d) in enriched.iter_mut().zip(dists) {
                        ep.distributions.insert(schema.name.clone(), d);
                    }
                }
                if let Some(gaz) = registry.gazetteer() {
                    for ep in &mut enriched {
                        ep.locations = extract_locations(&ep.post, gaz, &registry.location_context);
                    }
                }
                Ok(enriched)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(batches.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentiment() -> DimensionSchema {
        DimensionSchema::builtin("sentiment").unwrap()
    }

    #[test]
    fn builtin_schemas_are_valid() {
        for name in DimensionSchema::builtin_names() {
            let s = DimensionSchema::builtin(name).unwrap();
            if s.kind == SchemaKind::Categorical {
                assert!(s.classes.len() >= 2, "{name}");
            }
        }
        assert_eq!(DimensionSchema::builtin("emotion").unwrap().classes.len(), 8);
        assert_eq!(DimensionSchema::builtin("stakeholder").unwrap().classes.len(), 5);
    }

    #[test]
    fn schema_rejects_degenerate_class_lists() {
        assert!(DimensionSchema::categorical("x", &["a"]).is_err());
        assert!(DimensionSchema::categorical("x", &["a", "a"]).is_err());
    }

    #[test]
    fn distribution_validation() {
        let s = sentiment();
        let ok = BTreeMap::from([("positive".into(), 0.25), ("negative".into(), 0.75)]);
        assert!(ClassDistribution::new(&s, ok).is_ok());
        let bad_sum = BTreeMap::from([("positive".into(), 0.5), ("negative".into(), 0.6)]);
        assert!(ClassDistribution::new(&s, bad_sum).is_err());
        let missing = BTreeMap::from([("positive".into(), 1.0)]);
        assert!(ClassDistribution::new(&s, missing).is_err());
    }

    #[test]
    fn argmax_ties_go_to_smallest_class_id() {
        let s = sentiment();
        let d = ClassDistribution::uniform(&s);
        assert_eq!(d.argmax().0, "negative");
    }

    #[test]
    fn empty_dimension_list_yields_bare_posts() {
        let corpus = Corpus::from_posts(vec![Post::new("1", "a"), Post::new("2", "b")]).unwrap();
        let out = enrich_corpus(&corpus, &[], &BackendRegistry::new()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|e| e.distributions.is_empty()));
    }

    #[test]
    fn missing_backend_is_a_config_error() {
        let corpus = Corpus::from_posts(vec![Post::new("1", "a")]).unwrap();
        let err = enrich_corpus(&corpus, &["sentiment".to_string()], &BackendRegistry::new()).unwrap_err();
        assert!(matches!(err, ClassifyError::Config(_)));
    }

    #[test]
    fn ground_truth_is_one_hot() {
        let corpus = Corpus::from_posts(vec![
            Post::new("1", "bridge out").with_label(DISASTER_EVENT, "infrastructure_and_utility_damage"),
        ])
        .unwrap();
        let mut reg = BackendRegistry::new();
        reg.register(DISASTER_EVENT, Arc::new(GroundTruthBackend));
        let out = enrich_corpus(&corpus, &[DISASTER_EVENT.to_string()], &reg).unwrap();
        let d = &out[0].distributions[DISASTER_EVENT];
        assert_eq!(d.argmax(), ("infrastructure_and_utility_damage", 1.0));
        assert_eq!(d.probs.values().filter(|p| **p == 0.0).count(), 8);
    }
}
