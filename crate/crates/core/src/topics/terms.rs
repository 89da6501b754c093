use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermWeight {
    pub term: String,
    pub weight: f64,
}

/// Class-based term weighting. `docs[i]` is the token list of document `i`
/// and `assignments[i]` its topic in `0..k`. For topic `c` the weight of
/// term `t` is `tf(t,c) * ln(1 + A / f(t))`, where `f(t)` is the term's
/// frequency over all topics and `A` the mean token count per topic.
/// Lists are ordered by weight descending, then term ascending.
pub fn class_term_weights(docs: &[Vec<String>], assignments: &[usize], k: usize, top_n: usize) -> Vec<Vec<TermWeight>> {
    let mut tf: Vec<HashMap<&str, usize>> = vec![HashMap::new(); k];
    let mut total: HashMap<&str, usize> = HashMap::new();
    let mut tokens = 0usize;
    for (doc, &topic) in docs.iter().zip(assignments) {
        for term in doc {
            *tf[topic].entry(term.as_str()).or_default() += 1;
            *total.entry(term.as_str()).or_default() += 1;
            tokens += 1;
        }
    }
    let avg = if k == 0 { 0.0 } else { tokens as f64 / k as f64 };
    tf.into_iter()
        .map(|counts| {
            let mut ranked: Vec<TermWeight> = counts
                .into_iter()
                .map(|(term, n)| TermWeight {
                    term: term.to_string(),
                    weight: n as f64 * (1.0 + avg / total[term] as f64).ln(),
                })
                .collect();
            ranked.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term)));
            ranked.truncate(top_n);
            ranked
        })
        .collect()
}

/// Top terms only, for printing.
pub fn term_labels(terms: &[TermWeight], n: usize) -> String {
    terms.iter().take(n).map(|t| t.term.as_str()).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| t.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn single_topic_matches_direct_formula() {
        let d = docs(&["fire fire smoke", "smoke road", "fire road road road"]);
        let w = class_term_weights(&d, &[0, 0, 0], 1, 10);
        // A = 9 tokens / 1 topic; f(t) = tf(t)
        let expect = |tf: f64| tf * (1.0 + 9.0 / tf).ln();
        let got: Vec<(&str, f64)> = w[0].iter().map(|t| (t.term.as_str(), t.weight)).collect();
        assert_eq!(got[0].0, "road");
        assert!((got[0].1 - expect(4.0)).abs() < 1e-12);
        assert_eq!(got[1].0, "fire");
        assert!((got[1].1 - expect(3.0)).abs() < 1e-12);
        assert_eq!(got[2].0, "smoke");
    }

    #[test]
    fn disjoint_topics_keep_their_vocabulary() {
        let d = docs(&["fire smoke", "flood water", "smoke ash", "water levee"]);
        let w = class_term_weights(&d, &[0, 1, 0, 1], 2, 10);
        assert!(w[0].iter().all(|t| ["fire", "smoke", "ash"].contains(&t.term.as_str())));
        assert!(w[1].iter().all(|t| ["flood", "water", "levee"].contains(&t.term.as_str())));
    }

    #[test]
    fn empty_topic_has_no_terms() {
        let d = docs(&["fire smoke"]);
        let w = class_term_weights(&d, &[0], 2, 10);
        assert!(w[1].is_empty());
    }
}
