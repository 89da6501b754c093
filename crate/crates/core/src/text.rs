//! Tokenization, stop words and stemming shared by the classifiers, the
//! topic model and the evaluation metrics.

use std::collections::HashSet;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

const STOPWORDS_EN: &str = include_str!("../assets/stopwords_en.txt");

/// Lowercases `text` and splits it on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokens that carry content: stop words, single characters and pure
/// numbers removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().count() > 1 && !is_stopword(t) && !t.chars().all(|c| c.is_numeric()))
        .collect()
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_EN.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// English Snowball stemmer.
pub fn stem(token: &str) -> String {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English)).stem(token).into_owned()
}

/// Lowercase, drop stop words, stem.
pub fn stemmed_terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).map(|t| stem(&t)).collect()
}

/// Splits on non-alphanumerics and additionally at lower-to-upper case
/// boundaries, so `#ItalyEarthquake` yields `Italy`, `Earthquake`. Case is
/// preserved; each token carries its byte span in `text`.
pub fn split_words_with_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut prev_lower = false;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            match start {
                Some(s) if prev_lower && c.is_uppercase() => {
                    spans.push((s, i));
                    start = Some(i);
                }
                None => start = Some(i),
                _ => {}
            }
            prev_lower = c.is_lowercase();
        } else {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            prev_lower = false;
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Truncates to at most `max_chars` characters on a char boundary.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("The Cat, sat!"), vec!["the", "cat", "sat"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn content_tokens_drop_stopwords_and_numbers() {
        assert_eq!(content_tokens("The fire in 2018 destroyed a town"), vec!["fire", "destroyed", "town"]);
    }

    #[test]
    fn stemming_is_suffix_stripping() {
        assert_eq!(stem("running"), "run");
        assert_eq!(stem("fires"), "fire");
        assert_eq!(stemmed_terms("The fires were burning"), vec!["fire", "burn"]);
    }

    #[test]
    fn camel_case_hashtags_split() {
        let text = "rubble. #ItalyEarthquake";
        let words: Vec<&str> = split_words_with_spans(text).into_iter().map(|(s, e)| &text[s..e]).collect();
        assert_eq!(words, vec!["rubble", "Italy", "Earthquake"]);
    }

    #[test]
    fn acronyms_stay_whole() {
        let text = "EMS and CA";
        let words: Vec<&str> = split_words_with_spans(text).into_iter().map(|(s, e)| &text[s..e]).collect();
        assert_eq!(words, vec!["EMS", "and", "CA"]);
    }

    #[test]
    fn truncate_respects_char_boundaries() {
        assert_eq!(truncate_chars("Caffè Strada", 5), "Caffè");
        assert_eq!(truncate_chars("abc", 10), "abc");
    }
}
