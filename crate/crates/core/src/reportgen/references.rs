use serde::{Deserialize, Serialize};

use crate::text::truncate_chars;

pub const EXCERPT_CHARS: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub marker: usize,
    pub post_id: String,
    pub excerpt: String,
}

/// Distinct citation markers in order of first appearance. Accepts `[3]`,
/// `[1, 2]` and `[1][2]`.
pub fn citation_markers(body: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        let inner = &rest[..close];
        let parts: Option<Vec<usize>> = inner.split(',').map(|p| p.trim().parse().ok()).collect();
        if let Some(nums) = parts.filter(|n| !n.is_empty()) {
            for n in nums {
                if !out.contains(&n) {
                    out.push(n);
                }
            }
            rest = &rest[close + 1..];
        }
    }
    out
}

/// Maps each marker `[n]` to the n-th candidate (1-based). Markers with no
/// candidate come back as warnings.
pub fn attach_references(body: &str, candidates: &[(&str, &str)]) -> (Vec<Reference>, Vec<String>) {
    let mut refs = Vec::new();
    let mut warnings = Vec::new();
    for n in citation_markers(body) {
        match n.checked_sub(1).and_then(|i| candidates.get(i)) {
            Some((id, text)) => {
                let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
                refs.push(Reference { marker: n, post_id: id.to_string(), excerpt: truncate_chars(&flat, EXCERPT_CHARS).to_string() });
            }
            None => warnings.push(format!("dangling reference [{n}]: only {} source posts", candidates.len())),
        }
    }
    (refs, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_markers() {
        assert_eq!(attach_references("plain text", &[("a", "x")]), (vec![], vec![]));
    }

    #[test]
    fn adjacent_and_list_markers() {
        assert_eq!(citation_markers("trapped [1][2] and [2, 3] but not [x] or []"), vec![1, 2, 3]);
        let (refs, warn) = attach_references("people trapped [1][2]", &[("p1", "first"), ("p2", "second")]);
        assert_eq!(refs.iter().map(|r| r.post_id.as_str()).collect::<Vec<_>>(), vec!["p1", "p2"]);
        assert!(warn.is_empty());
    }

    #[test]
    fn dangling_marker_warns() {
        let (refs, warn) = attach_references("see [4]", &[("p1", "first")]);
        assert!(refs.is_empty());
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn excerpt_is_bounded() {
        let long = "word ".repeat(100);
        let (refs, _) = attach_references("[1]", &[("p", &long)]);
        assert!(refs[0].excerpt.chars().count() <= EXCERPT_CHARS);
    }
}
