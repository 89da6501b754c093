//! Representative sample selection: class frequencies per dimension,
//! proportional quotas, confidence ranking and a union of the per-class
//! selections, capped at the target size.

use std::collections::{BTreeMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::classify::EnrichedPost;
use crate::corpus::{SUBEVENT_POST, SUB_EVENT};

/// Slack used when flooring `p * share`, so that products such as
/// `0.6 * 100` do not lose a unit to representation error.
const FLOOR_SNAP: f64 = 1e-9;
const FREQUENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SampleError {
    #[error("invalid sampling request: {0}")]
    Validation(String),
    #[error("post `{post_id}` has no `{dimension}` distribution")]
    MissingDistribution { post_id: String, dimension: String },
    #[error("no post falls in the selected classes of `{dimension}`")]
    EmptyStratum { dimension: String },
    #[error("every stratum is empty")]
    EmptySample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSelection {
    pub dimension: String,
    pub classes: Vec<String>,
}

impl DimensionSelection {
    pub fn new(dimension: impl Into<String>, classes: &[&str]) -> Self {
        DimensionSelection { dimension: dimension.into(), classes: classes.iter().map(|c| c.to_string()).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleFilters {
    /// Keep only posts with a location resolving to this city.
    pub city: Option<String>,
    /// Keep only posts whose sub-event argmax is `subevent_post`.
    pub subevent_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub dimensions: Vec<DimensionSelection>,
    pub target_size: usize,
    #[serde(default)]
    pub filters: SampleFilters,
    /// Give every dimension the full target size and skip backfill; the
    /// union may then exceed the target.
    #[serde(default)]
    pub uncapped: bool,
}

impl SamplingSpec {
    pub fn new(dimensions: Vec<DimensionSelection>, target_size: usize) -> Self {
        SamplingSpec { dimensions, target_size, filters: SampleFilters::default(), uncapped: false }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.target_size == 0 {
            return Err(SampleError::Validation("target size must be positive".into()));
        }
        if self.dimensions.is_empty() {
            return Err(SampleError::Validation("no dimensions selected".into()));
        }
        let mut seen = HashSet::new();
        for sel in &self.dimensions {
            if !seen.insert(sel.dimension.as_str()) {
                return Err(SampleError::Validation(format!("dimension `{}` selected twice", sel.dimension)));
            }
            if sel.classes.is_empty() {
                return Err(SampleError::Validation(format!("no classes selected for `{}`", sel.dimension)));
            }
            let distinct: HashSet<&String> = sel.classes.iter().collect();
            if distinct.len() != sel.classes.len() {
                return Err(SampleError::Validation(format!("`{}` lists a class twice", sel.dimension)));
            }
        }
        Ok(())
    }

    /// Per-dimension share of the target size: an even split with the
    /// remainder going to earlier dimensions.
    pub fn shares(&self) -> Vec<usize> {
        let z = self.dimensions.len();
        if self.uncapped {
            return vec![self.target_size; z];
        }
        (0..z).map(|i| self.target_size / z + usize::from(i < self.target_size % z)).collect()
    }
}

/// Fraction of posts whose argmax on `dimension` is each selected class,
/// among posts whose argmax is any selected class.
pub fn class_frequencies(posts: &[&EnrichedPost], dimension: &str, classes: &[String]) -> Result<BTreeMap<String, f64>, SampleError> {
    let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
    for post in posts {
        let dist = post.distribution(dimension).ok_or_else(|| SampleError::MissingDistribution {
            post_id: post.id().to_string(),
            dimension: dimension.to_string(),
        })?;
        if let Some(n) = counts.get_mut(dist.argmax().0) {
            *n += 1;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(SampleError::EmptyStratum { dimension: dimension.to_string() });
    }
    Ok(counts.into_iter().map(|(c, n)| (c, n as f64 / total as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub quotas: BTreeMap<String, usize>,
    /// Fractional part of `p * share` for each class.
    pub remainders: BTreeMap<String, f64>,
}

impl Allocation {
    pub fn total(&self) -> usize {
        self.quotas.values().sum()
    }
}

/// Largest-remainder rounding of `p * share`. Leftover units go to the
/// largest fractional parts, ties to the smallest class id.
pub fn allocate(frequencies: &BTreeMap<String, f64>, share: i64) -> Result<Allocation, SampleError> {
    if share < 0 {
        return Err(SampleError::Validation(format!("share {share} is negative")));
    }
    if frequencies.is_empty() {
        return Err(SampleError::Validation("no classes to allocate".into()));
    }
    if let Some((c, p)) = frequencies.iter().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(SampleError::Validation(format!("frequency of `{c}` is {p}")));
    }
    let sum: f64 = frequencies.values().sum();
    if (sum - 1.0).abs() > FREQUENCY_TOLERANCE {
        return Err(SampleError::Validation(format!("frequencies sum to {sum}")));
    }
    let share_u = share as usize;
    let mut quotas = BTreeMap::new();
    let mut remainders = BTreeMap::new();
    for (class, p) in frequencies {
        let exact = p * share as f64;
        let floor = (exact + FLOOR_SNAP).floor().max(0.0);
        quotas.insert(class.clone(), floor as usize);
        remainders.insert(class.clone(), (exact - floor).max(0.0));
    }
    let mut order: Vec<&String> = frequencies.keys().collect();
    // remainders equal up to rounding noise count as ties
    let key = |c: &String| (remainders[c] / FLOOR_SNAP).round() as i64;
    order.sort_by(|a, b| key(b).cmp(&key(a)).then_with(|| a.cmp(b)));
    let mut assigned: usize = quotas.values().sum();
    let mut i = 0;
    while assigned < share_u {
        *quotas.get_mut(order[i % order.len()]).expect("class present") += 1;
        assigned += 1;
        i += 1;
    }
    let mut j = order.len();
    while assigned > share_u {
        j = if j == 0 { order.len() - 1 } else { j - 1 };
        let q = quotas.get_mut(order[j]).expect("class present");
        if *q > 0 {
            *q -= 1;
            assigned -= 1;
        }
    }
    Ok(Allocation { quotas, remainders })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranked {
    /// The top `quota` posts.
    pub selected: Vec<String>,
    /// Remaining eligible posts, still in rank order.
    pub rest: Vec<String>,
    pub deficit: usize,
}

/// Posts whose argmax on `dimension` is `class`, by confidence descending
/// and post id ascending, split at `quota`.
pub fn rank_and_select(posts: &[&EnrichedPost], dimension: &str, class: &str, quota: usize) -> Ranked {
    let mut eligible: Vec<(&str, f64)> = posts
        .iter()
        .filter_map(|p| {
            let d = p.distribution(dimension)?;
            (d.argmax().0 == class).then(|| (p.id(), d.confidence(class)))
        })
        .collect();
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let take = quota.min(eligible.len());
    let mut ids = eligible.into_iter().map(|(id, _)| id.to_string());
    let selected: Vec<String> = ids.by_ref().take(take).collect();
    Ranked { selected, rest: ids.collect(), deficit: quota - take }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dimension: String,
    pub class: String,
    /// 1-based position in the stratum's ranking.
    pub rank: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backfill: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub spec: SamplingSpec,
    pub members: Vec<String>,
    pub provenance: IndexMap<String, Vec<Provenance>>,
    /// Dimension to class to unfilled quota.
    pub deficits: BTreeMap<String, BTreeMap<String, usize>>,
    pub allocations: BTreeMap<String, Allocation>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, post_id: &str) -> bool {
        self.provenance.contains_key(post_id)
    }

    /// Members resolved against `posts`, in sample order.
    pub fn resolve<'a>(&self, posts: &'a [EnrichedPost]) -> Vec<&'a EnrichedPost> {
        let by_id: std::collections::HashMap<&str, &EnrichedPost> = posts.iter().map(|p| (p.id(), p)).collect();
        self.members.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sample serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn subevent_argmax(post: &EnrichedPost) -> Option<&str> {
    post.argmax(SUB_EVENT).or_else(|| post.post.label(SUB_EVENT))
}

/// Sub-event posts with a location that resolves to `city`.
pub fn filter_city_subevents<'a>(posts: &'a [EnrichedPost], city: &str) -> Vec<&'a EnrichedPost> {
    posts
        .iter()
        .filter(|p| subevent_argmax(p) == Some(SUBEVENT_POST) && p.locations.iter().any(|l| l.mentions(city)))
        .collect()
}

fn apply_filters<'a>(posts: &'a [EnrichedPost], filters: &SampleFilters) -> Vec<&'a EnrichedPost> {
    posts
        .iter()
        .filter(|p| !filters.subevent_only || subevent_argmax(p) == Some(SUBEVENT_POST))
        .filter(|p| filters.city.as_deref().is_none_or(|city| p.locations.iter().any(|l| l.mentions(city))))
        .collect()
}

struct Stratum {
    dimension: String,
    class: String,
    ranked: Vec<String>,
    quota: usize,
}

/// Builds the representative sample described by `spec`.
pub fn build_sample(posts: &[EnrichedPost], spec: &SamplingSpec) -> Result<Sample, SampleError> {
    spec.validate()?;
    let pool = apply_filters(posts, &spec.filters);
    for sel in &spec.dimensions {
        if let Some(p) = pool.iter().find(|p| p.distribution(&sel.dimension).is_none()) {
            return Err(SampleError::MissingDistribution { post_id: p.id().to_string(), dimension: sel.dimension.clone() });
        }
        let known: HashSet<&str> =
            pool.iter().filter_map(|p| p.distribution(&sel.dimension)).flat_map(|d| d.probs.keys().map(String::as_str)).collect();
        if let Some(bad) = sel.classes.iter().find(|c| !pool.is_empty() && !known.contains(c.as_str())) {
            return Err(SampleError::Validation(format!("`{bad}` is not a class of `{}`", sel.dimension)));
        }
    }

    let mut strata: Vec<Stratum> = Vec::new();
    let mut allocations = BTreeMap::new();
    let mut deficits: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (sel, share) in spec.dimensions.iter().zip(spec.shares()) {
        let freqs = match class_frequencies(&pool, &sel.dimension, &sel.classes) {
            Ok(f) => f,
            Err(SampleError::EmptyStratum { .. }) => continue,
            Err(e) => return Err(e),
        };
        let allocation = allocate(&freqs, share as i64)?;
        for class in &sel.classes {
            let quota = allocation.quotas[class];
            let ranked = rank_and_select(&pool, &sel.dimension, class, quota);
            if ranked.deficit > 0 {
                deficits.entry(sel.dimension.clone()).or_default().insert(class.clone(), ranked.deficit);
            }
            strata.push(Stratum {
                dimension: sel.dimension.clone(),
                class: class.clone(),
                quota: ranked.selected.len(),
                ranked: ranked.selected.into_iter().chain(ranked.rest).collect(),
            });
        }
        allocations.insert(sel.dimension.clone(), allocation);
    }
    if strata.iter().all(|s| s.ranked.is_empty()) {
        return Err(SampleError::EmptySample);
    }

    let mut members: Vec<String> = Vec::new();
    let mut provenance: IndexMap<String, Vec<Provenance>> = IndexMap::new();
    for s in &strata {
        for (i, id) in s.ranked[..s.quota].iter().enumerate() {
            let entry = Provenance { dimension: s.dimension.clone(), class: s.class.clone(), rank: i + 1, backfill: false };
            provenance.entry(id.clone()).or_insert_with(|| {
                members.push(id.clone());
                Vec::new()
            });
            provenance[id.as_str()].push(entry);
        }
    }

    if !spec.uncapped {
        let mut cursors: Vec<usize> = strata.iter().map(|s| s.quota).collect();
        while members.len() < spec.target_size {
            let mut progressed = false;
            for (s, cursor) in strata.iter().zip(cursors.iter_mut()) {
                if members.len() >= spec.target_size {
                    break;
                }
                while *cursor < s.ranked.len() && provenance.contains_key(&s.ranked[*cursor]) {
                    *cursor += 1;
                }
                if *cursor < s.ranked.len() {
                    let id = s.ranked[*cursor].clone();
                    let entry =
                        Provenance { dimension: s.dimension.clone(), class: s.class.clone(), rank: *cursor + 1, backfill: true };
                    provenance.insert(id.clone(), vec![entry]);
                    members.push(id);
                    *cursor += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    Ok(Sample { spec: spec.clone(), members, provenance, deficits, allocations })
}
