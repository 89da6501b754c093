//! Seeded synthetic corpora for tests and benchmarks.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Post;

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ru", "te", "zo", "ba", "ne", "fi", "gu", "sa", "vo", "pe", "di", "ho", "xu"];

/// Pronounceable pseudo-word for `n`; distinct `n` give distinct words.
pub fn pseudo_word(n: usize) -> String {
    let mut word = String::new();
    let mut rest = n;
    for _ in 0..3 {
        word.push_str(SYLLABLES[rest % SYLLABLES.len()]);
        rest /= SYLLABLES.len();
    }
    while rest > 0 {
        word.push_str(SYLLABLES[rest % SYLLABLES.len()]);
        rest /= SYLLABLES.len();
    }
    word
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub posts: Vec<Post>,
    /// Planted cluster of each post.
    pub truth: Vec<usize>,
    /// Each cluster's vocabulary, most frequent first.
    pub vocabularies: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Copy)]
pub struct PlantedSpec {
    pub clusters: usize,
    pub vocab_per_cluster: usize,
    pub docs_per_cluster: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf exponent of term frequencies inside a cluster.
    pub zipf: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec { clusters: 5, vocab_per_cluster: 30, docs_per_cluster: 40, min_len: 6, max_len: 12, zipf: 1.0 }
    }
}

/// Clusters with pairwise disjoint vocabularies. Documents are interleaved
/// across clusters; ids are `d000`, `d001`, ...
pub fn planted_corpus(spec: PlantedSpec, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocabularies: Vec<Vec<String>> = (0..spec.clusters)
        .map(|c| (0..spec.vocab_per_cluster).map(|j| pseudo_word(c * spec.vocab_per_cluster + j)).collect())
        .collect();
    let weights: Vec<f64> = (1..=spec.vocab_per_cluster).map(|r| 1.0 / (r as f64).powf(spec.zipf)).collect();
    let zipf = WeightedIndex::new(&weights).expect("zipf weights are positive");
    let mut posts = Vec::new();
    let mut truth = Vec::new();
    for d in 0..spec.docs_per_cluster {
        for (c, vocab) in vocabularies.iter().enumerate() {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let text: Vec<&str> = (0..len).map(|_| vocab[zipf.sample(&mut rng)].as_str()).collect();
            let id = format!("d{:03}", d * spec.clusters + c);
            posts.push(Post::new(id, text.join(" ")));
            truth.push(c);
        }
    }
    PlantedCorpus { posts, truth, vocabularies }
}

/// `count` posts of exactly `words` short lowercase words each.
pub fn word_posts(count: usize, words: usize, seed: u64) -> Vec<Post> {
    const VOCAB: [&str; 24] = [
        "fire", "smoke", "road", "help", "homes", "lost", "safe", "crews", "town", "ash", "wind", "north", "camp", "burn",
        "area", "news", "pray", "cars", "park", "bay", "heat", "zone", "air", "map",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let text: Vec<&str> = (0..words).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect();
            Post::new(format!("w{i:05}"), text.join(" "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::content_tokens;

    #[test]
    fn pseudo_words_are_distinct_content_tokens() {
        let words: Vec<String> = (0..500).map(pseudo_word).collect();
        let mut sorted = words.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 500);
        for w in &words {
            assert_eq!(content_tokens(w), vec![w.clone()]);
        }
    }

    #[test]
    fn planted_corpus_is_seeded() {
        let a = planted_corpus(PlantedSpec::default(), 4);
        let b = planted_corpus(PlantedSpec::default(), 4);
        assert_eq!(a.posts, b.posts);
        assert_eq!(a.posts.len(), 200);
    }
}
