use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::Embedder;
use crate::text::{stemmed_terms, tokenize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if overlap == 0 || candidate == 0 || reference == 0 {
            return Prf::default();
        }
        let precision = overlap as f64 / candidate as f64;
        let recall = overlap as f64 / reference as f64;
        Prf { precision, recall, f1: 2.0 * precision * recall / (precision + recall) }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over token lists, with clipped n-gram counts.
pub fn rouge_n_tokens(candidate: &[String], reference: &[String], n: usize) -> Prf {
    if n == 0 {
        return Prf::default();
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand.iter().map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, candidate.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

/// ROUGE-1 or ROUGE-2 on lowercase alphanumeric tokens.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<Prf, EvalError> {
    if !(1..=2).contains(&n) {
        return Err(EvalError::Validation(format!("ROUGE-{n} is not supported")));
    }
    Ok(rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n))
}

/// Length of the longest common subsequence, in O(min(|a|, |b|)) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

pub fn rouge_l_tokens(candidate: &[String], reference: &[String]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfidfScore {
    pub value: f64,
    /// One of the texts had no terms left after preprocessing.
    pub degenerate: bool,
}

/// TF-IDF cosine over the two-document collection `{candidate, reference}`
/// after stop-word removal and stemming, with smoothed IDF
/// `ln((1 + N) / (1 + df)) + 1`.
pub fn tfidf_cosine(candidate: &str, reference: &str) -> TfidfScore {
    let a = stemmed_terms(candidate);
    let b = stemmed_terms(reference);
    if a.is_empty() || b.is_empty() {
        return TfidfScore { value: 0.0, degenerate: true };
    }
    let count = |terms: &[String]| {
        let mut m: HashMap<String, f64> = HashMap::new();
        for t in terms {
            *m.entry(t.clone()).or_default() += 1.0;
        }
        m
    };
    let (ta, tb) = (count(&a), count(&b));
    let idf = |term: &str| {
        let df = usize::from(ta.contains_key(term)) + usize::from(tb.contains_key(term));
        (3.0 / (1.0 + df as f64)).ln() + 1.0
    };
    let mut dot = 0.0;
    for (term, fa) in &ta {
        if let Some(fb) = tb.get(term) {
            let w = idf(term);
            dot += fa * w * fb * w;
        }
    }
    let norm = |m: &HashMap<String, f64>| m.iter().map(|(t, f)| (f * idf(t)).powi(2)).sum::<f64>().sqrt();
    let value = (dot / (norm(&ta) * norm(&tb))).clamp(0.0, 1.0);
    TfidfScore { value, degenerate: false }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine of the two document embeddings, clamped to `[0, 1]`.
pub fn embedding_cosine(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, EvalError> {
    let vectors = embedder.embed(&[candidate.to_string(), reference.to_string()])?;
    match vectors.as_slice() {
        [a, b] if a.len() == b.len() => Ok(cosine(a, b).clamp(0.0, 1.0)),
        [a, b] => Err(EvalError::Protocol(format!("embedding dimensions differ: {} vs {}", a.len(), b.len()))),
        other => Err(EvalError::Protocol(format!("{} embeddings for 2 texts", other.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{HashingEmbedder, ScriptedEmbedder};

    #[test]
    fn rouge_examples() {
        let r1 = rouge_n("the cat sat", "the cat ran", 1).unwrap();
        assert!((r1.precision - 2.0 / 3.0).abs() < 1e-12 && (r1.f1 - 2.0 / 3.0).abs() < 1e-12);
        let r2 = rouge_n("the cat sat", "the cat ran", 2).unwrap();
        assert_eq!((r2.precision, r2.recall, r2.f1), (0.5, 0.5, 0.5));
        let rl = rouge_l("a b c d", "a c b d");
        assert_eq!((rl.precision, rl.recall), (0.75, 0.75));
        assert_eq!(rouge_l("", "a b"), Prf::default());
        assert!(rouge_n("a", "a", 3).is_err());
    }

    #[test]
    fn clipped_counts() {
        let r = rouge_n("the the the", "the cat", 1).unwrap();
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.recall, 0.5);
    }

    #[test]
    fn tfidf_identity_and_disjoint() {
        assert!((tfidf_cosine("Fires burning homes", "Fires burning homes").value - 1.0).abs() < 1e-12);
        assert_eq!(tfidf_cosine("wildfire smoke", "flood water").value, 0.0);
        assert!(tfidf_cosine("the and of", "fire").degenerate);
    }

    #[test]
    fn embedding_cosine_values() {
        let e = ScriptedEmbedder::new([("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.6, 0.8]), ("c".to_string(), vec![-1.0, 0.0])]);
        assert!((embedding_cosine("a", "b", &e).unwrap() - 0.6).abs() < 1e-7);
        assert_eq!(embedding_cosine("a", "c", &e).unwrap(), 0.0);
        assert!(embedding_cosine("a", "zzz", &e).is_err());
        assert!((embedding_cosine("fire near town", "fire near town", &HashingEmbedder::default()).unwrap() - 1.0).abs() < 1e-9);
    }
}
