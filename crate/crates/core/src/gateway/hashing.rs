use super::{Embedder, GatewayError};
use crate::text::{content_tokens, fnv1a, tokenize};

/// Offline embedder: signed feature hashing of content tokens into a fixed
/// number of buckets. Deterministic across machines and runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dimension: 1024 }
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashingEmbedder { dimension: dimension.max(1) }
    }

    /// Tokens fed to the hash: content tokens, else all tokens, else the
    /// trimmed text itself.
    pub fn features(text: &str) -> Vec<String> {
        let content = content_tokens(text);
        if !content.is_empty() {
            return content;
        }
        let all = tokenize(text);
        if !all.is_empty() {
            return all;
        }
        vec![text.trim().to_string()]
    }

    pub fn bucket(&self, feature: &str) -> (usize, f32) {
        let h = fnv1a(feature.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dimension as u64) as usize, sign)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dimension];
        for feature in Self::features(text) {
            let (idx, sign) = self.bucket(&feature);
            v[idx] += sign;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
