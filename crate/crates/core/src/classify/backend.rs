use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ClassDistribution, ClassifyError, DimensionSchema};
use crate::corpus::Post;
use crate::text::tokenize;

/// Turns a batch of posts into one distribution per post, in order.
/// Implementations must tolerate concurrent calls.
pub trait ClassifierBackend: Send + Sync {
    fn classify_batch(&self, posts: &[&Post], schema: &DimensionSchema) -> Result<Vec<ClassDistribution>, ClassifyError>;

    fn name(&self) -> &str;
}

/// Adopts a post's ground-truth label as a one-hot distribution.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthBackend;

impl ClassifierBackend for GroundTruthBackend {
    fn classify_batch(&self, posts: &[&Post], schema: &DimensionSchema) -> Result<Vec<ClassDistribution>, ClassifyError> {
        posts
            .iter()
            .map(|post| {
                let label = post.label(&schema.name).ok_or_else(|| ClassifyError::Backend {
                    post_id: post.id.clone(),
                    dimension: schema.name.clone(),
                    message: "no ground-truth label".into(),
                })?;
                ClassDistribution::one_hot(schema, label).map_err(|e| ClassifyError::Backend {
                    post_id: post.id.clone(),
                    dimension: schema.name.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn name(&self) -> &str {
        "ground-truth"
    }
}

/// Class id to cue words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(pub BTreeMap<String, BTreeSet<String>>);

impl Lexicon {
    pub fn new<'a>(entries: impl IntoIterator<Item = (&'a str, &'a [&'a str])>) -> Self {
        Lexicon(
            entries
                .into_iter()
                .map(|(class, words)| (class.to_string(), words.iter().map(|w| w.to_lowercase()).collect()))
                .collect(),
        )
    }

    /// Shipped lexicon for a built-in dimension.
    pub fn builtin(dimension: &str) -> Option<Self> {
        let raw = match dimension {
            "sentiment" => include_str!("../../assets/lexicons/sentiment.json"),
            "content_type" => include_str!("../../assets/lexicons/content_type.json"),
            "emotion" => include_str!("../../assets/lexicons/emotion.json"),
            "stakeholder" => include_str!("../../assets/lexicons/stakeholder.json"),
            "disaster_event" => include_str!("../../assets/lexicons/disaster_event.json"),
            _ => return None,
        };
        serde_json::from_str(raw).ok()
    }

    /// Occurrences of each class's cue words in `text`.
    pub fn hits(&self, text: &str, classes: &[String]) -> BTreeMap<String, f64> {
        let tokens = tokenize(text);
        classes
            .iter()
            .map(|class| {
                let count = self.0.get(class).map_or(0, |words| tokens.iter().filter(|t| words.contains(*t)).count());
                (class.clone(), count as f64)
            })
            .collect()
    }
}

/// Softmax (temperature 1) over lexicon hit counts. An empty lexicon gives
/// the uniform distribution.
#[derive(Debug, Clone)]
pub struct LexiconBackend {
    lexicon: Lexicon,
    temperature: f64,
}

impl LexiconBackend {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconBackend { lexicon, temperature: 1.0 }
    }

    pub fn builtin(dimension: &str) -> Option<Self> {
        Lexicon::builtin(dimension).map(Self::new)
    }
}

impl ClassifierBackend for LexiconBackend {
    fn classify_batch(&self, posts: &[&Post], schema: &DimensionSchema) -> Result<Vec<ClassDistribution>, ClassifyError> {
        if let Some(unknown) = self.lexicon.0.keys().find(|c| !schema.has_class(c)) {
            return Err(ClassifyError::Config(format!("lexicon class `{unknown}` is not in `{}`", schema.name)));
        }
        posts
            .iter()
            .map(|post| ClassDistribution::softmax(schema, &self.lexicon.hits(&post.text, &schema.classes), self.temperature))
            .collect()
    }

    fn name(&self) -> &str {
        "lexicon"
    }
}
