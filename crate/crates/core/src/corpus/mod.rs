//! Post datasets: ingestion, validation, filtering and the derived
//! labelings built on the HumAID taxonomy.

mod ingest;
mod taxonomy;
mod transform;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use ingest::{ingest_posts, parse_timestamp, write_jsonl, FieldMap, Ingested, RecordFormat};
pub use taxonomy::{DisasterTaxonomy, DISASTER_EVENT, NON_SUBEVENT_POST, SUBEVENT_POST, SUB_EVENT};
pub use transform::{balance_by_undersampling, filter_posts, relabel_subevents, PostFilter};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate post id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: required field `{field}` is missing or empty")]
    MissingField { field: String, line: usize },
    #[error("line {line}: malformed record: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("date range start {start} is after end {end}")]
    InvertedDateRange { start: DateTime<Utc>, end: DateTime<Utc> },
    #[error("class `{class}` has {count} posts, {required} required")]
    InsufficientClass { class: String, count: usize, required: usize },
    #[error("posts lack a `{dimension}` label: {}", post_ids.join(", "))]
    MissingLabel { dimension: String, post_ids: Vec<String> },
    #[error("invalid post: {0}")]
    InvalidPost(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One social media message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub created_at: Option<DateTime<Utc>>,
    pub author_id: Option<String>,
    /// Counter name (likes, reposts, favorites) to value.
    #[serde(default)]
    pub engagement: BTreeMap<String, u64>,
    /// Ground-truth labels keyed by dimension name.
    #[serde(default)]
    pub source_labels: BTreeMap<String, String>,
}

impl Post {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Post {
            id: id.into(),
            text: text.into(),
            created_at: None,
            author_id: None,
            engagement: BTreeMap::new(),
            source_labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, dimension: impl Into<String>, class: impl Into<String>) -> Self {
        self.source_labels.insert(dimension.into(), class.into());
        self
    }

    pub fn with_created_at(mut self, at: DateTime<Utc>) -> Self {
        self.created_at = Some(at);
        self
    }

    pub fn total_engagement(&self) -> u64 {
        self.engagement.values().sum()
    }

    pub fn label(&self, dimension: &str) -> Option<&str> {
        self.source_labels.get(dimension).map(String::as_str)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidPost("empty id".into()));
        }
        if self.text.trim().is_empty() {
            return Err(CorpusError::InvalidPost(format!("post `{}` has empty text", self.id)));
        }
        Ok(())
    }
}

/// Closed or half-open UTC interval. Either end may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DateRange {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl DateRange {
    pub fn new(start: Option<DateTime<Utc>>, end: Option<DateTime<Utc>>) -> Result<Self, CorpusError> {
        let range = DateRange { start, end };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        match (self.start, self.end) {
            (Some(start), Some(end)) if start > end => Err(CorpusError::InvertedDateRange { start, end }),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| at >= s) && self.end.is_none_or(|e| at <= e)
    }

    /// Smallest range covering every timestamped post, if any.
    pub fn spanning<'a>(posts: impl IntoIterator<Item = &'a Post>) -> Option<Self> {
        let mut times = posts.into_iter().filter_map(|p| p.created_at);
        let first = times.next()?;
        let (start, end) = times.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
        Some(DateRange { start: Some(start), end: Some(end) })
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let day = |t: DateTime<Utc>| t.format("%Y-%m-%d").to_string();
        match (self.start, self.end) {
            (Some(s), Some(e)) => write!(f, "{} to {}", day(s), day(e)),
            (Some(s), None) => write!(f, "from {}", day(s)),
            (None, Some(e)) => write!(f, "until {}", day(e)),
            (None, None) => write!(f, "unspecified dates"),
        }
    }
}

/// An ordered, id-unique collection of posts about one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub corpus_id: String,
    pub event_name: String,
    pub area: String,
    #[serde(default)]
    pub date_range: DateRange,
    posts: Vec<Post>,
}

impl Corpus {
    pub fn new(
        corpus_id: impl Into<String>,
        event_name: impl Into<String>,
        area: impl Into<String>,
        date_range: DateRange,
        posts: Vec<Post>,
    ) -> Result<Self, CorpusError> {
        date_range.validate()?;
        let mut seen = HashSet::with_capacity(posts.len());
        for (idx, post) in posts.iter().enumerate() {
            post.validate()?;
            if !seen.insert(post.id.as_str()) {
                return Err(CorpusError::DuplicateId { id: post.id.clone(), line: idx + 1 });
            }
        }
        Ok(Corpus { corpus_id: corpus_id.into(), event_name: event_name.into(), area: area.into(), date_range, posts })
    }

    /// Anonymous corpus, mostly for tests and ad-hoc use.
    pub fn from_posts(posts: Vec<Post>) -> Result<Self, CorpusError> {
        Corpus::new("adhoc", "", "", DateRange::default(), posts)
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.id == id)
    }

    /// Same metadata, different posts. Posts are assumed to come from `self`
    /// so invariants already hold.
    pub(crate) fn with_posts(&self, posts: Vec<Post>) -> Corpus {
        Corpus {
            corpus_id: self.corpus_id.clone(),
            event_name: self.event_name.clone(),
            area: self.area.clone(),
            date_range: self.date_range,
            posts,
        }
    }

    /// Concatenation of every post text in corpus order, one per line.
    pub fn reference_text(&self) -> String {
        let mut out = String::new();
        for (i, post) in self.posts.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&post.text);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = Corpus::from_posts(vec![Post::new("a", "x"), Post::new("b", "y"), Post::new("a", "z")]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { ref id, .. } if id == "a"));
    }

    #[test]
    fn blank_text_is_rejected() {
        assert!(Corpus::from_posts(vec![Post::new("a", "   ")]).is_err());
    }

    #[test]
    fn inverted_range_is_rejected() {
        let a = Utc.with_ymd_and_hms(2018, 11, 8, 0, 0, 0).unwrap();
        let b = Utc.with_ymd_and_hms(2018, 11, 25, 0, 0, 0).unwrap();
        assert!(DateRange::new(Some(b), Some(a)).is_err());
        let ok = DateRange::new(Some(a), Some(b)).unwrap();
        assert_eq!(ok.to_string(), "2018-11-08 to 2018-11-25");
        assert!(ok.contains(a) && ok.contains(b));
    }

    #[test]
    fn reference_text_joins_in_order() {
        let c = Corpus::from_posts(vec![Post::new("1", "first"), Post::new("2", "second")]).unwrap();
        assert_eq!(c.reference_text(), "first\nsecond");
    }
}
