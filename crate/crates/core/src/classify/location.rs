//! Gazetteer-backed place recognition. A matched name is expanded along its
//! parent chain as far as the gazetteer can type each ancestor; ambiguous
//! names fall back to the part of the chain all readings agree on.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::corpus::Post;
use crate::text::split_words_with_spans;

/// Ordered most specific first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceKind {
    Venue,
    Street,
    District,
    City,
    Region,
    Country,
}

/// One gazetteer line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceEntry {
    pub name: String,
    pub kind: PlaceKind,
    /// Ancestor names, nearest first.
    #[serde(default, alias = "parent_chain")]
    pub parents: Vec<String>,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedPlace {
    pub kind: PlaceKind,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completeness {
    SurfaceOnly,
    Partial,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationMention {
    pub surface: String,
    /// Most specific first.
    pub resolved: Vec<ResolvedPlace>,
    pub completeness: Completeness,
}

impl LocationMention {
    fn new(surface: String, mut resolved: Vec<ResolvedPlace>) -> Self {
        resolved.sort_by_key(|p| p.kind);
        let has = |k| resolved.iter().any(|p| p.kind == k);
        let completeness = if has(PlaceKind::City) && has(PlaceKind::Country) {
            Completeness::Full
        } else if resolved.is_empty() {
            Completeness::SurfaceOnly
        } else {
            Completeness::Partial
        };
        LocationMention { surface, resolved, completeness }
    }

    /// True if any resolved component (or the surface) names `place`.
    pub fn mentions(&self, place: &str) -> bool {
        let place = place.trim().to_lowercase();
        self.surface.to_lowercase() == place || self.resolved.iter().any(|p| p.name.to_lowercase() == place)
    }
}

/// Disambiguation hint, typically the event's affected area.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationContext {
    pub area_hint: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<PlaceEntry>,
    /// Lowercased word sequence of a name or alias to entry indices.
    by_words: HashMap<Vec<String>, Vec<usize>>,
    by_name: HashMap<String, Vec<usize>>,
    longest: usize,
}

fn words(text: &str) -> Vec<String> {
    split_words_with_spans(text).into_iter().map(|(s, e)| text[s..e].to_lowercase()).collect()
}

impl Gazetteer {
    pub fn new(entries: impl IntoIterator<Item = PlaceEntry>) -> Self {
        let mut gaz = Gazetteer::default();
        for entry in entries {
            gaz.insert(entry);
        }
        gaz
    }

    /// Reads JSON-lines, one [`PlaceEntry`] per line.
    pub fn from_jsonl(reader: impl BufRead) -> Result<Self, ClassifyError> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| ClassifyError::Gazetteer { line: idx + 1, detail: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: PlaceEntry =
                serde_json::from_str(&line).map_err(|e| ClassifyError::Gazetteer { line: idx + 1, detail: e.to_string() })?;
            entries.push(entry);
        }
        Ok(Gazetteer::new(entries))
    }

    pub fn insert(&mut self, entry: PlaceEntry) {
        let idx = self.entries.len();
        for name in std::iter::once(&entry.name).chain(&entry.aliases) {
            let key = words(name);
            if key.is_empty() {
                continue;
            }
            self.longest = self.longest.max(key.len());
            let slot = self.by_words.entry(key).or_default();
            if !slot.contains(&idx) {
                slot.push(idx);
            }
        }
        self.by_name.entry(entry.name.to_lowercase()).or_default().push(idx);
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PlaceEntry] {
        &self.entries
    }

    /// The typed chain for one entry: itself plus every ancestor the
    /// gazetteer can identify.
    fn chain(&self, idx: usize) -> Vec<ResolvedPlace> {
        let entry = &self.entries[idx];
        let mut out = vec![ResolvedPlace { kind: entry.kind, name: entry.name.clone() }];
        for (i, parent) in entry.parents.iter().enumerate() {
            let Some(candidates) = self.by_name.get(&parent.to_lowercase()) else { continue };
            let rest = &entry.parents[i + 1..];
            let exact = candidates.iter().find(|&&c| {
                let p = &self.entries[c].parents;
                p.len() == rest.len() && p.iter().zip(rest).all(|(a, b)| a.eq_ignore_ascii_case(b))
            });
            let pick = exact.or(if candidates.len() == 1 { candidates.first() } else { None });
            if let Some(&c) = pick {
                out.push(ResolvedPlace { kind: self.entries[c].kind, name: self.entries[c].name.clone() });
            }
        }
        out
    }

    fn resolve(&self, candidates: &[usize], context: &LocationContext) -> Vec<ResolvedPlace> {
        let mut chains: Vec<Vec<ResolvedPlace>> = candidates.iter().map(|&c| self.chain(c)).collect();
        if chains.len() > 1 {
            if let Some(hint) = context.area_hint.as_deref() {
                let hint_words = words(hint);
                let matches_hint = |chain: &Vec<ResolvedPlace>| {
                    chain.iter().any(|p| {
                        let w = words(&p.name);
                        !w.is_empty() && hint_words.windows(w.len()).any(|win| win == w.as_slice())
                    })
                };
                let preferred: Vec<_> = chains.iter().filter(|c| matches_hint(c)).cloned().collect();
                if !preferred.is_empty() {
                    chains = preferred;
                }
            }
        }
        chains.dedup();
        match chains.len() {
            0 => Vec::new(),
            1 => chains.pop().unwrap_or_default(),
            _ => common_tail(&chains),
        }
    }
}

/// Components shared by every chain, compared from the least specific end.
fn common_tail(chains: &[Vec<ResolvedPlace>]) -> Vec<ResolvedPlace> {
    let first = &chains[0];
    let mut shared = 0;
    'outer: while shared < first.len() {
        let candidate = &first[first.len() - 1 - shared];
        for chain in &chains[1..] {
            if chain.len() <= shared || &chain[chain.len() - 1 - shared] != candidate {
                break 'outer;
            }
        }
        shared += 1;
    }
    first[first.len() - shared..].to_vec()
}

/// Finds gazetteer places named in the post, longest match first, and
/// resolves each as far as the gazetteer allows.
pub fn extract_locations(post: &Post, gazetteer: &Gazetteer, context: &LocationContext) -> Vec<LocationMention> {
    let text = post.text.as_str();
    let spans = split_words_with_spans(text);
    let lowered: Vec<String> = spans.iter().map(|&(s, e)| text[s..e].to_lowercase()).collect();
    let mut mentions: Vec<LocationMention> = Vec::new();
    let mut i = 0;
    while i < spans.len() {
        let max = gazetteer.longest.min(spans.len() - i);
        let hit = (1..=max).rev().find_map(|len| gazetteer.by_words.get(&lowered[i..i + len]).map(|c| (len, c)));
        match hit {
            Some((len, candidates)) => {
                let surface = text[spans[i].0..spans[i + len - 1].1].to_string();
                let mention = LocationMention::new(surface, gazetteer.resolve(candidates, context));
                let duplicate = mentions
                    .iter()
                    .any(|m| m.resolved == mention.resolved && m.surface.eq_ignore_ascii_case(&mention.surface));
                if !duplicate {
                    mentions.push(mention);
                }
                i += len;
            }
            None => i += 1,
        }
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn place(name: &str, kind: PlaceKind, parents: &[&str]) -> PlaceEntry {
        PlaceEntry { name: name.into(), kind, parents: parents.iter().map(|p| p.to_string()).collect(), aliases: Vec::new() }
    }

    fn berkeley() -> Gazetteer {
        Gazetteer::new([
            place("Caffè Strada", PlaceKind::Venue, &["Berkeley", "CA", "United States"]),
            place("Elmwood", PlaceKind::District, &["Berkeley", "CA", "United States"]),
            place("Berkeley", PlaceKind::City, &["CA", "United States"]),
            place("CA", PlaceKind::Region, &["United States"]),
            place("United States", PlaceKind::Country, &[]),
            place("Italy", PlaceKind::Country, &[]),
        ])
    }

    #[test]
    fn venue_resolves_full_chain() {
        let m = extract_locations(&Post::new("1", "at Caffè Strada now"), &berkeley(), &LocationContext::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "Caffè Strada");
        let kinds: Vec<_> = m[0].resolved.iter().map(|p| p.kind).collect();
        assert_eq!(kinds, vec![PlaceKind::Venue, PlaceKind::City, PlaceKind::Region, PlaceKind::Country]);
        assert_eq!(m[0].completeness, Completeness::Full);
    }

    #[test]
    fn hashtag_country_is_partial() {
        let post = Post::new("1", "#BREAKING: girl was pulled out alive from the rubble. #ItalyEarthquake");
        let m = extract_locations(&post, &berkeley(), &LocationContext::default());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].surface, "Italy");
        assert_eq!(m[0].resolved, vec![ResolvedPlace { kind: PlaceKind::Country, name: "Italy".into() }]);
        assert_eq!(m[0].completeness, Completeness::Partial);
    }

    #[test]
    fn no_places_no_mentions() {
        assert!(extract_locations(&Post::new("1", "nothing to see"), &berkeley(), &LocationContext::default()).is_empty());
    }

    #[test]
    fn ambiguous_names_fall_back_to_shared_tail() {
        let gaz = Gazetteer::new([
            place("Paradise", PlaceKind::City, &["California", "United States"]),
            place("Paradise", PlaceKind::City, &["Nevada", "United States"]),
            place("California", PlaceKind::Region, &["United States"]),
            place("Nevada", PlaceKind::Region, &["United States"]),
            place("United States", PlaceKind::Country, &[]),
        ]);
        let post = Post::new("1", "Evacuate Paradise now");
        let m = extract_locations(&post, &gaz, &LocationContext::default());
        assert_eq!(m[0].resolved, vec![ResolvedPlace { kind: PlaceKind::Country, name: "United States".into() }]);
        assert_eq!(m[0].completeness, Completeness::Partial);

        let hinted = LocationContext { area_hint: Some("Butte County, California".into()) };
        let m = extract_locations(&post, &gaz, &hinted);
        assert_eq!(m[0].completeness, Completeness::Full);
        assert!(m[0].mentions("california"));
    }

    #[test]
    fn jsonl_loading() {
        let data = r#"{"name":"Paradise","kind":"city","parents":["California","United States"]}
{"name":"United States","kind":"country","parents":[]}
"#;
        let gaz = Gazetteer::from_jsonl(data.as_bytes()).unwrap();
        assert_eq!(gaz.len(), 2);
        assert!(Gazetteer::from_jsonl(&b"{\"name\":1}"[..]).is_err());
    }
}
