//! Seeded inputs shared by the benchmarks.

use std::collections::BTreeMap;

use crisis_core::classify::{ClassDistribution, DimensionSchema, EnrichedPost};
use crisis_core::sample::DimensionSelection;
use crisis_core::synth::word_posts;
use crisis_core::SamplingSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` posts with a random distribution on each of `dimensions`
/// (named `d0`, `d1`, ...), each over `classes` classes.
pub fn labeled_posts(n: usize, dimensions: usize, classes: usize, seed: u64) -> Vec<EnrichedPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_ids: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let schemas: Vec<DimensionSchema> = (0..dimensions)
        .map(|d| DimensionSchema::categorical(format!("d{d}"), &class_ids.iter().map(String::as_str).collect::<Vec<_>>()).unwrap())
        .collect();
    word_posts(n, 12, seed)
        .into_iter()
        .map(|post| {
            let mut enriched = EnrichedPost::new(post);
            for schema in &schemas {
                let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.01..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let probs: BTreeMap<String, f64> = class_ids.iter().cloned().zip(raw.iter().map(|r| r / total)).collect();
                enriched.distributions.insert(schema.name.clone(), ClassDistribution::new(schema, probs).unwrap());
            }
            enriched
        })
        .collect()
}

/// Selects every class on every dimension of [`labeled_posts`].
pub fn full_spec(dimensions: usize, classes: usize, target: usize) -> SamplingSpec {
    let class_ids: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let refs: Vec<&str> = class_ids.iter().map(String::as_str).collect();
    SamplingSpec::new((0..dimensions).map(|d| DimensionSelection::new(format!("d{d}"), &refs)).collect(), target)
}
