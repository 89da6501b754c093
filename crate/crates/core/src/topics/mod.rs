//! Topic discovery: document embeddings, seeded spherical k-means,
//! class-based term weighting and a coherence sweep over the topic count.

mod coherence;
mod kmeans;
mod terms;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassDistribution, ClassifyError, DimensionSchema, EnrichedPost};
use crate::gateway::{Embedder, GatewayError};
use crate::text::{content_tokens, fnv1a};

pub use coherence::{coherence_cv, CoherenceIndex, CoherenceScore, COHERENCE_TOP_N, DEFAULT_EPSILON, DEFAULT_WINDOW};
pub use kmeans::{cluster_topics, cluster_topics_with, Clustering, MAX_ITERATIONS, RESTARTS, TOLERANCE};
pub use terms::{class_term_weights, term_labels, TermWeight};

/// Dimension name used when topics feed the sampler.
pub const TOPIC_DIMENSION: &str = "topic";
/// Temperature of the soft topic distribution derived from centroid similarity.
pub const TOPIC_SOFTMAX_TEMPERATURE: f64 = 0.1;
pub const EMBED_BATCH: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum TopicError {
    #[error("invalid topic request: {0}")]
    Validation(String),
    #[error("embedding protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicConfig {
    pub top_n: usize,
    pub coherence_top_n: usize,
    pub window: usize,
    pub epsilon: f64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        TopicConfig { top_n: 10, coherence_top_n: COHERENCE_TOP_N, window: DEFAULT_WINDOW, epsilon: DEFAULT_EPSILON }
    }
}

/// `{5, 10, ..., 50}`.
pub fn default_k_grid() -> Vec<usize> {
    (1..=10).map(|i| i * 5).collect()
}

pub fn topic_label(id: usize) -> String {
    format!("T_{id}")
}

/// Embeds post texts in batches and scales every row to unit length. A row
/// that comes back as the zero vector is replaced by a basis vector chosen
/// from the text's hash.
pub fn embed_documents(posts: &[EnrichedPost], embedder: &dyn Embedder) -> Result<Vec<Vec<f64>>, TopicError> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(posts.len());
    let mut dim: Option<usize> = None;
    for chunk in posts.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|p| p.post.text.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(TopicError::Protocol(format!("{} embeddings for {} texts", vectors.len(), texts.len())));
        }
        for (vector, text) in vectors.into_iter().zip(&texts) {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d || d == 0 {
                return Err(TopicError::Protocol(format!("embedding dimension {} differs from {d}", vector.len())));
            }
            let mut row: Vec<f64> = vector.into_iter().map(f64::from).collect();
            if !kmeans::normalize(&mut row) {
                row = vec![0.0; d];
                row[(fnv1a(text.as_bytes()) % d as u64) as usize] = 1.0;
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Content tokens of every post, in order.
pub fn document_tokens(posts: &[EnrichedPost]) -> Vec<Vec<String>> {
    posts.iter().map(|p| content_tokens(&p.post.text)).collect()
}

/// Ranked terms per topic; see [`class_term_weights`].
pub fn topic_terms(posts: &[EnrichedPost], assignments: &[usize], k: usize, top_n: usize) -> Vec<Vec<TermWeight>> {
    class_term_weights(&document_tokens(posts), assignments, k, top_n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    /// Post id to topic id, in corpus order.
    pub assignments: IndexMap<String, usize>,
    pub terms: Vec<Vec<TermWeight>>,
    pub coherence: f64,
    pub flagged: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl TopicModel {
    pub fn topic_of(&self, post_id: &str) -> Option<usize> {
        self.assignments.get(post_id).copied()
    }

    pub fn members(&self, topic: usize) -> Vec<&str> {
        self.assignments.iter().filter(|(_, &t)| t == topic).map(|(id, _)| id.as_str()).collect()
    }

    /// Schema with one class per topic (`T_0`, `T_1`, ...). Needs k >= 2.
    pub fn schema(&self) -> Result<DimensionSchema, TopicError> {
        let classes: Vec<String> = (0..self.k).map(topic_label).collect();
        Ok(DimensionSchema::new(TOPIC_DIMENSION, classes, crate::classify::SchemaKind::Categorical)?)
    }

    /// Softmax over centroid similarity at [`TOPIC_SOFTMAX_TEMPERATURE`].
    pub fn distribution(&self, schema: &DimensionSchema, embedding: &[f64]) -> Result<ClassDistribution, TopicError> {
        let scores: BTreeMap<String, f64> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| (topic_label(c), kmeans::dot(embedding, centroid)))
            .collect();
        Ok(ClassDistribution::softmax(schema, &scores, TOPIC_SOFTMAX_TEMPERATURE)?)
    }

    /// Sets `topic_id` on every post and, when k >= 2, a `topic`
    /// distribution. `embeddings` must be aligned with `posts`.
    pub fn annotate(&self, posts: &mut [EnrichedPost], embeddings: &[Vec<f64>]) -> Result<(), TopicError> {
        let schema = if self.k >= 2 { Some(self.schema()?) } else { None };
        for (post, row) in posts.iter_mut().zip(embeddings) {
            post.topic_id = self.topic_of(post.id());
            if let Some(schema) = &schema {
                let mut dist = self.distribution(schema, row)?;
                // keep argmax consistent with the hard assignment
                if let Some(t) = post.topic_id {
                    let label = topic_label(t);
                    if dist.argmax().0 != label {
                        dist = ClassDistribution::one_hot(schema, &label)?;
                    }
                }
                post.distributions.insert(TOPIC_DIMENSION.to_string(), dist);
            }
        }
        Ok(())
    }
}

/// Fits one model with `k` topics. Rows are clustered in post-id order so
/// the result does not depend on the order of `posts`.
pub fn fit_topic_model(
    posts: &[EnrichedPost],
    embeddings: &[Vec<f64>],
    k: usize,
    seed: u64,
    config: &TopicConfig,
    index: &CoherenceIndex,
) -> Result<TopicModel, TopicError> {
    if posts.len() != embeddings.len() {
        return Err(TopicError::Validation(format!("{} posts but {} embeddings", posts.len(), embeddings.len())));
    }
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.sort_by(|&a, &b| posts[a].id().cmp(posts[b].id()));
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| embeddings[i].clone()).collect();
    let clustering = cluster_topics(&sorted, k, seed)?;
    let mut raw = vec![0usize; posts.len()];
    for (pos, &i) in order.iter().enumerate() {
        raw[i] = clustering.assignments[pos];
    }
    // relabel by first appearance in corpus order
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &raw {
        if map[a] == usize::MAX {
            map[a] = next;
            next += 1;
        }
    }
    for slot in map.iter_mut().filter(|m| **m == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let assigned: Vec<usize> = raw.iter().map(|&a| map[a]).collect();
    let mut centroids = vec![Vec::new(); k];
    for (old, c) in clustering.centroids.into_iter().enumerate() {
        centroids[map[old]] = c;
    }
    let terms = topic_terms(posts, &assigned, k, config.top_n.max(config.coherence_top_n));
    let lists: Vec<Vec<&str>> = terms.iter().map(|t| t.iter().map(|w| w.term.as_str()).collect()).collect();
    let score = coherence_cv(&lists, index, config.coherence_top_n);
    let terms = terms.into_iter().map(|mut t| {
        t.truncate(config.top_n);
        t
    });
    Ok(TopicModel {
        k,
        assignments: posts.iter().map(|p| p.id().to_string()).zip(assigned).collect(),
        terms: terms.collect(),
        coherence: score.value,
        flagged: score.flagged,
        centroids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherencePoint {
    pub k: usize,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub points: Vec<CoherencePoint>,
    pub selected_k: usize,
}

/// Fits a model for every k in the grid, in parallel, and keeps the one
/// with the highest coherence (smallest k on ties).
pub fn select_topic_count(
    posts: &[EnrichedPost],
    embeddings: &[Vec<f64>],
    k_grid: &[usize],
    seed: u64,
    config: &TopicConfig,
) -> Result<(CoherenceCurve, TopicModel), TopicError> {
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(TopicError::Validation("k grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|&&k| k == 0 || k > posts.len()) {
        return Err(TopicError::Validation(format!("k = {bad} is not valid for {} posts", posts.len())));
    }
    let index = CoherenceIndex::new(&document_tokens(posts), config.window).with_epsilon(config.epsilon);
    let models: Vec<TopicModel> = grid
        .par_iter()
        .map(|&k| fit_topic_model(posts, embeddings, k, seed, config, &index))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (i, m) in models.iter().enumerate() {
        if m.coherence > models[best].coherence {
            best = i;
        }
    }
    let curve = CoherenceCurve {
        points: models.iter().map(|m| CoherencePoint { k: m.k, cv: m.coherence }).collect(),
        selected_k: models[best].k,
    };
    let model = models.into_iter().nth(best).expect("best index is in range");
    Ok((curve, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub id: usize,
    pub label: String,
    pub terms: Vec<TermWeight>,
    pub post_ids: Vec<String>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicExport {
    pub k: usize,
    pub coherence: f64,
    pub topics: Vec<TopicSummary>,
}

pub fn export_topic_clusters(model: &TopicModel) -> TopicExport {
    let topics = (0..model.k)
        .map(|id| {
            let post_ids: Vec<String> = model.members(id).into_iter().map(String::from).collect();
            TopicSummary {
                id,
                label: topic_label(id),
                terms: model.terms.get(id).cloned().unwrap_or_default(),
                size: post_ids.len(),
                post_ids,
            }
        })
        .collect();
    TopicExport { k: model.k, coherence: model.coherence, topics }
}

impl TopicExport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topic export serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use crate::gateway::HashingEmbedder;

    fn posts(texts: &[&str]) -> Vec<EnrichedPost> {
        texts.iter().enumerate().map(|(i, t)| EnrichedPost::new(Post::new(format!("p{i:02}"), *t))).collect()
    }

    #[test]
    fn embeddings_are_unit_rows() {
        let p = posts(&["wildfire smoke california", "wildfire smoke california", "flood"]);
        let rows = embed_documents(&p, &HashingEmbedder::default()).unwrap();
        assert_eq!(rows[0], rows[1]);
        for r in &rows {
            assert!((kmeans::dot(r, r).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_topic_export_holds_everything() {
        let p = posts(&["wildfire smoke", "smoke homes", "homes lost"]);
        let rows = embed_documents(&p, &HashingEmbedder::default()).unwrap();
        let (curve, model) = select_topic_count(&p, &rows, &[1], 3, &TopicConfig::default()).unwrap();
        assert_eq!(curve.selected_k, 1);
        let export = export_topic_clusters(&model);
        assert_eq!(export.topics.len(), 1);
        assert_eq!(export.topics[0].size, 3);
        assert_eq!(export.topics[0].label, "T_0");
        assert_eq!(TopicExport::from_json(&export.to_json()).unwrap(), export);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let p = posts(&["a b"]);
        assert!(select_topic_count(&p, &[vec![1.0]], &[], 0, &TopicConfig::default()).is_err());
    }
}
