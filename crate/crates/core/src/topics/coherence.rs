use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_EPSILON: f64 = 1e-12;
pub const COHERENCE_TOP_N: usize = 10;

/// Term presence per sliding window. A document shorter than the window
/// counts as a single window.
#[derive(Debug, Clone)]
pub struct CoherenceIndex {
    windows: usize,
    presence: HashMap<String, Vec<u64>>,
    epsilon: f64,
}

impl CoherenceIndex {
    pub fn new(docs: &[Vec<String>], window: usize) -> Self {
        let window = window.max(1);
        let mut sets: Vec<Vec<&str>> = Vec::new();
        for doc in docs.iter().filter(|d| !d.is_empty()) {
            if doc.len() <= window {
                sets.push(doc.iter().map(String::as_str).collect());
            } else {
                for start in 0..=doc.len() - window {
                    sets.push(doc[start..start + window].iter().map(String::as_str).collect());
                }
            }
        }
        let words = sets.len().div_ceil(64).max(1);
        let mut presence: HashMap<String, Vec<u64>> = HashMap::new();
        for (w, set) in sets.iter().enumerate() {
            for term in set {
                let bits = presence.entry((*term).to_string()).or_insert_with(|| vec![0; words]);
                bits[w / 64] |= 1 << (w % 64);
            }
        }
        CoherenceIndex { windows: sets.len(), presence, epsilon: DEFAULT_EPSILON }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    fn count(&self, term: &str) -> u32 {
        self.presence.get(term).map_or(0, |b| b.iter().map(|w| w.count_ones()).sum())
    }

    fn joint(&self, a: &str, b: &str) -> u32 {
        match (self.presence.get(a), self.presence.get(b)) {
            (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| (p & q).count_ones()).sum(),
            _ => 0,
        }
    }

    /// Normalized PMI of two terms. Pairs that never share a window score
    /// -1; pairs present in every window score 1.
    pub fn npmi(&self, a: &str, b: &str) -> f64 {
        if self.windows == 0 {
            return -1.0;
        }
        let n = self.windows as f64;
        let joint = self.joint(a, b);
        if joint == 0 {
            return -1.0;
        }
        let pij = joint as f64 / n;
        let pi = self.count(a) as f64 / n;
        let pj = self.count(b) as f64 / n;
        let denom = -(pij + self.epsilon).ln();
        if denom <= self.epsilon {
            return 1.0;
        }
        (((pij + self.epsilon) / (pi * pj)).ln() / denom).clamp(-1.0, 1.0)
    }

    /// Mean pairwise NPMI over the first `top_n` terms, or `None` when
    /// fewer than two terms are available. Pairs are visited in sorted term
    /// order so equal term sets give bit-identical scores.
    pub fn topic_coherence(&self, terms: &[&str], top_n: usize) -> Option<f64> {
        let mut terms: Vec<&str> = terms.iter().take(top_n).copied().collect();
        if terms.len() < 2 {
            return None;
        }
        terms.sort_unstable();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                sum += self.npmi(terms[i], terms[j]);
                pairs += 1;
            }
        }
        Some(sum / pairs as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    pub value: f64,
    pub per_topic: Vec<f64>,
    /// Topics with fewer than two terms; each contributes 0.
    pub flagged: Vec<usize>,
}

/// Mean over topics of mean pairwise NPMI among each topic's top terms.
pub fn coherence_cv(term_lists: &[Vec<&str>], index: &CoherenceIndex, top_n: usize) -> CoherenceScore {
    let mut per_topic = Vec::with_capacity(term_lists.len());
    let mut flagged = Vec::new();
    for (t, terms) in term_lists.iter().enumerate() {
        match index.topic_coherence(terms, top_n) {
            Some(v) => per_topic.push(v),
            None => {
                flagged.push(t);
                per_topic.push(0.0);
            }
        }
    }
    let value = if per_topic.is_empty() { 0.0 } else { per_topic.iter().sum::<f64>() / per_topic.len() as f64 };
    CoherenceScore { value, per_topic, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| t.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn perfect_association_scores_one() {
        let idx = CoherenceIndex::new(&docs(&["fire smoke", "flood", "fire smoke ash", "levee", "rain"]), 10);
        assert!((idx.npmi("fire", "smoke") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn never_together_scores_minus_one() {
        let idx = CoherenceIndex::new(&docs(&["fire ash", "flood rain", "fire", "flood", "rain"]), 10);
        assert_eq!(idx.npmi("fire", "flood"), -1.0);
    }

    #[test]
    fn direct_npmi_on_fixture() {
        // 5 windows; fire in 3, smoke in 2, both in 1
        let idx = CoherenceIndex::new(&docs(&["fire smoke", "fire", "fire ash", "smoke", "ash"]), 10);
        let (pij, pi, pj) = (0.2f64, 0.6f64, 0.4f64);
        let eps = DEFAULT_EPSILON;
        let expected = ((pij + eps) / (pi * pj)).ln() / -(pij + eps).ln();
        assert!((idx.npmi("fire", "smoke") - expected).abs() < 1e-12);
    }

    #[test]
    fn sliding_windows() {
        let idx = CoherenceIndex::new(&docs(&["a b c d"]), 2);
        assert_eq!(idx.windows(), 3);
        assert_eq!(idx.npmi("a", "c"), -1.0);
    }

    #[test]
    fn short_lists_are_flagged() {
        let idx = CoherenceIndex::new(&docs(&["fire smoke"]), 10);
        let s = coherence_cv(&[vec!["fire", "smoke"], vec!["fire"]], &idx, 10);
        assert_eq!(s.flagged, vec![1]);
        assert!((s.value - s.per_topic[0] / 2.0).abs() < 1e-15);
    }
}
