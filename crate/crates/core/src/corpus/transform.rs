use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, DateRange, DisasterTaxonomy, DISASTER_EVENT, NON_SUBEVENT_POST, SUBEVENT_POST, SUB_EVENT};
use crate::text::tokenize;

/// Relevance filter. A post passes when it satisfies every supplied
/// criterion; within `keywords` any one keyword suffices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostFilter {
    /// Matched as whole tokens, case-insensitively. Multi-word keywords
    /// must appear as a contiguous token run.
    pub keywords: Vec<String>,
    pub date_range: Option<DateRange>,
    /// Minimum summed engagement across all counters.
    pub min_engagement: Option<u64>,
}

pub fn filter_posts(corpus: &Corpus, filter: &PostFilter) -> Result<Corpus, CorpusError> {
    if let Some(range) = &filter.date_range {
        range.validate()?;
    }
    let keywords: Vec<Vec<String>> =
        filter.keywords.iter().map(|k| tokenize(k)).filter(|k| !k.is_empty()).collect();

    let posts = corpus
        .posts()
        .iter()
        .filter(|post| {
            if !keywords.is_empty() {
                let tokens = tokenize(&post.text);
                if !keywords.iter().any(|kw| tokens.windows(kw.len()).any(|w| w == kw.as_slice())) {
                    return false;
                }
            }
            if let Some(range) = &filter.date_range {
                if !post.created_at.is_some_and(|t| range.contains(t)) {
                    return false;
                }
            }
            filter.min_engagement.is_none_or(|min| post.total_engagement() >= min)
        })
        .cloned()
        .collect();
    Ok(corpus.with_posts(posts))
}

/// Derives the binary `sub_event` label from each post's `disaster_event`
/// label.
pub fn relabel_subevents(corpus: &Corpus, taxonomy: &DisasterTaxonomy) -> Result<Corpus, CorpusError> {
    let missing: Vec<String> = corpus
        .posts()
        .iter()
        .filter(|p| p.label(DISASTER_EVENT).is_none_or(|c| !taxonomy.contains(c)))
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingLabel { dimension: DISASTER_EVENT.into(), post_ids: missing });
    }
    let posts = corpus
        .posts()
        .iter()
        .map(|post| {
            let mut post = post.clone();
            let class = post.source_labels[DISASTER_EVENT].as_str();
            let derived = if taxonomy.is_subevent(class) { SUBEVENT_POST } else { NON_SUBEVENT_POST };
            post.source_labels.insert(SUB_EVENT.into(), derived.into());
            post
        })
        .collect();
    Ok(corpus.with_posts(posts))
}

/// Keeps exactly `per_class` posts of every class of `dimension`, chosen by
/// a seeded shuffle. Survivors keep their corpus order.
pub fn balance_by_undersampling(
    corpus: &Corpus,
    dimension: &str,
    per_class: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    if per_class == 0 {
        return Err(CorpusError::Schema("per_class must be positive".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut unlabeled = Vec::new();
    for (idx, post) in corpus.posts().iter().enumerate() {
        match post.label(dimension) {
            Some(class) => by_class.entry(class).or_default().push(idx),
            None => unlabeled.push(post.id.clone()),
        }
    }
    if !unlabeled.is_empty() {
        return Err(CorpusError::MissingLabel { dimension: dimension.into(), post_ids: unlabeled });
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < per_class) {
        return Err(CorpusError::InsufficientClass { class: class.to_string(), count: members.len(), required: per_class });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = HashSet::new();
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        keep.extend(members.iter().take(per_class).copied());
    }
    let posts = corpus.posts().iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, p)| p.clone()).collect();
    Ok(corpus.with_posts(posts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use chrono::{TimeZone, Utc};

    fn fixture() -> Corpus {
        let day = |d| Utc.with_ymd_and_hms(2018, 11, d, 12, 0, 0).unwrap();
        let mut posts = vec![
            Post::new("1", "Wildfire spreading fast near Paradise").with_created_at(day(8)),
            Post::new("2", "Traffic jam on Skyway").with_created_at(day(9)),
            Post::new("3", "The WILDFIRE smoke is everywhere").with_created_at(day(10)),
            Post::new("4", "wildfires are getting worse").with_created_at(day(11)),
            Post::new("5", "Praying for Butte County").with_created_at(day(12)),
        ];
        posts[0].engagement.insert("likes".into(), 10);
        posts[2].engagement.insert("likes".into(), 3);
        posts[2].engagement.insert("reposts".into(), 4);
        Corpus::from_posts(posts).unwrap()
    }

    #[test]
    fn empty_filter_is_identity() {
        let c = fixture();
        assert_eq!(filter_posts(&c, &PostFilter::default()).unwrap(), c);
    }

    #[test]
    fn keyword_filter_matches_whole_tokens_in_order() {
        let c = fixture();
        let f = PostFilter { keywords: vec!["wildfire".into()], ..Default::default() };
        let ids: Vec<_> = filter_posts(&c, &f).unwrap().posts().iter().map(|p| p.id.clone()).collect();
        // linear scan: "wildfires" is a different token
        let expected: Vec<_> = c
            .posts()
            .iter()
            .filter(|p| tokenize(&p.text).iter().any(|t| t == "wildfire"))
            .map(|p| p.id.clone())
            .collect();
        assert_eq!(ids, expected);
        assert_eq!(ids, vec!["1", "3"]);
    }

    #[test]
    fn multiword_keyword() {
        let f = PostFilter { keywords: vec!["Butte County".into()], ..Default::default() };
        assert_eq!(filter_posts(&fixture(), &f).unwrap().len(), 1);
    }

    #[test]
    fn date_filter_excluding_all() {
        let at = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
        let f = PostFilter { date_range: Some(DateRange { start: Some(at), end: None }), ..Default::default() };
        assert!(filter_posts(&fixture(), &f).unwrap().is_empty());
    }

    #[test]
    fn inverted_date_filter_is_rejected() {
        let a = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
        let b = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        let f = PostFilter { date_range: Some(DateRange { start: Some(a), end: Some(b) }), ..Default::default() };
        assert!(matches!(filter_posts(&fixture(), &f), Err(CorpusError::InvertedDateRange { .. })));
    }

    #[test]
    fn engagement_filter_sums_counters() {
        let f = PostFilter { min_engagement: Some(7), ..Default::default() };
        let ids: Vec<_> = filter_posts(&fixture(), &f).unwrap().posts().iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids, vec!["1", "3"]);
    }

    #[test]
    fn relabel_maps_subevent_classes() {
        let c = Corpus::from_posts(vec![
            Post::new("1", "bridge down").with_label(DISASTER_EVENT, "infrastructure_and_utility_damage"),
            Post::new("2", "thoughts").with_label(DISASTER_EVENT, "sympathy_and_support"),
        ])
        .unwrap();
        let out = relabel_subevents(&c, &DisasterTaxonomy::humaid()).unwrap();
        assert_eq!(out.posts()[0].label(SUB_EVENT), Some(SUBEVENT_POST));
        assert_eq!(out.posts()[1].label(SUB_EVENT), Some(NON_SUBEVENT_POST));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn relabel_empty_and_missing() {
        let empty = Corpus::from_posts(vec![]).unwrap();
        assert!(relabel_subevents(&empty, &DisasterTaxonomy::humaid()).unwrap().is_empty());

        let c = Corpus::from_posts(vec![Post::new("x", "no label"), Post::new("y", "ok").with_label(DISASTER_EVENT, "not_humanitarian")])
            .unwrap();
        match relabel_subevents(&c, &DisasterTaxonomy::humaid()).unwrap_err() {
            CorpusError::MissingLabel { post_ids, .. } => assert_eq!(post_ids, vec!["x"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn labeled(counts: &[(&str, usize)]) -> Corpus {
        let mut posts = Vec::new();
        for (class, n) in counts {
            for i in 0..*n {
                posts.push(Post::new(format!("{class}-{i}"), "text").with_label("d", *class));
            }
        }
        Corpus::from_posts(posts).unwrap()
    }

    #[test]
    fn balance_reaches_uniform_histogram() {
        let c = labeled(&[("a", 10), ("b", 7), ("c", 5)]);
        let out = balance_by_undersampling(&c, "d", 5, 42).unwrap();
        assert_eq!(out.len(), 15);
        for class in ["a", "b", "c"] {
            assert_eq!(out.posts().iter().filter(|p| p.label("d") == Some(class)).count(), 5);
        }
        assert_eq!(out, balance_by_undersampling(&c, "d", 5, 42).unwrap());
    }

    #[test]
    fn balance_of_balanced_is_identity() {
        let c = labeled(&[("a", 3), ("b", 3)]);
        assert_eq!(balance_by_undersampling(&c, "d", 3, 1).unwrap(), c);
    }

    #[test]
    fn balance_rejects_short_class() {
        let c = labeled(&[("a", 1200), ("b", 1199)]);
        match balance_by_undersampling(&c, "d", 1200, 0).unwrap_err() {
            CorpusError::InsufficientClass { class, count, required } => {
                assert_eq!((class.as_str(), count, required), ("b", 1199, 1200));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
