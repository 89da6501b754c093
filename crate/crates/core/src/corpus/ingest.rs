use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, CorpusError, DateRange, DisasterTaxonomy, Post, DISASTER_EVENT};

/// Accepted record encodings. Nested documents are not supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl RecordFormat {
    fn delimiter(self) -> Option<u8> {
        match self {
            RecordFormat::Csv => Some(b','),
            RecordFormat::Tsv => Some(b'\t'),
            RecordFormat::Jsonl => None,
        }
    }
}

impl std::str::FromStr for RecordFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(RecordFormat::Csv),
            "tsv" => Ok(RecordFormat::Tsv),
            "jsonl" | "json-lines" | "jsonlines" | "ndjson" => Ok(RecordFormat::Jsonl),
            other => Err(format!("unsupported record format `{other}`")),
        }
    }
}

/// Maps source columns (or top-level JSON keys) onto [`Post`] fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub text: String,
    pub created_at: Option<String>,
    pub author_id: Option<String>,
    /// Counter name to source column.
    pub engagement: BTreeMap<String, String>,
    /// Dimension name to source column.
    pub labels: BTreeMap<String, String>,
}

impl Default for FieldMap {
    /// The canonical persisted layout.
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            text: "text".into(),
            created_at: Some("created_at".into()),
            author_id: Some("author_id".into()),
            engagement: BTreeMap::new(),
            labels: BTreeMap::new(),
        }
    }
}

impl FieldMap {
    /// Column layout of the HumAID TSV release.
    pub fn humaid() -> Self {
        FieldMap {
            id: "tweet_id".into(),
            text: "tweet_text".into(),
            created_at: None,
            author_id: None,
            engagement: BTreeMap::new(),
            labels: BTreeMap::from([(DISASTER_EVENT.to_string(), "class_label".to_string())]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub corpus: Corpus,
    /// Records dropped because their label is an excluded class.
    pub dropped: usize,
}

/// Reads posts from `source`, dropping records labeled with an excluded
/// HumAID class. The returned corpus has empty metadata.
pub fn ingest_posts(mut source: impl Read, format: RecordFormat, field_map: &FieldMap) -> Result<Ingested, CorpusError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::Encoding(e.to_string()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);

    let records = match format.delimiter() {
        Some(delim) => read_delimited(text, delim, field_map)?,
        None => read_jsonl(text, field_map)?,
    };

    let taxonomy = DisasterTaxonomy::humaid();
    let mut seen = HashSet::new();
    let mut posts = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for (line, post) in records {
        if post.label(DISASTER_EVENT).is_some_and(|c| taxonomy.is_excluded(c)) {
            dropped += 1;
            continue;
        }
        if !seen.insert(post.id.clone()) {
            return Err(CorpusError::DuplicateId { id: post.id, line });
        }
        posts.push(post);
    }
    let corpus = Corpus::new("", "", "", DateRange::default(), posts)?;
    Ok(Ingested { corpus, dropped })
}

/// Canonical JSON-lines serialization, one post per line.
pub fn write_jsonl(posts: &[Post], mut out: impl Write) -> Result<(), CorpusError> {
    for post in posts {
        serde_json::to_writer(&mut out, post).map_err(|e| CorpusError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Accepts RFC 3339, `YYYY-MM-DD[ T]HH:MM:SS`, `YYYY-MM-DD`, the Twitter API
/// format and integer epoch seconds. Naive values are taken as UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Some(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0)?));
    }
    if let Ok(t) = DateTime::parse_from_str(raw, "%a %b %d %H:%M:%S %z %Y") {
        return Some(t.with_timezone(&Utc));
    }
    raw.parse::<i64>().ok().and_then(|secs| Utc.timestamp_opt(secs, 0).single())
}

/// Field values pulled out of one record before they become a [`Post`].
#[derive(Default)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    created_at: Option<String>,
    author_id: Option<String>,
    engagement: Vec<(String, String)>,
    labels: Vec<(String, String)>,
}

impl RawRecord {
    fn into_post(self, line: usize) -> Result<Post, CorpusError> {
        let missing = |field: &str| CorpusError::MissingField { field: field.to_string(), line };
        let id = self.id.filter(|s| !s.trim().is_empty()).ok_or_else(|| missing("id"))?;
        let text = self.text.filter(|s| !s.trim().is_empty()).ok_or_else(|| missing("text"))?;
        let created_at = match self.created_at.filter(|s| !s.trim().is_empty()) {
            Some(raw) => Some(parse_timestamp(&raw).ok_or_else(|| CorpusError::Malformed {
                line,
                detail: format!("unparseable timestamp `{raw}`"),
            })?),
            None => None,
        };
        let mut engagement = BTreeMap::new();
        for (name, raw) in self.engagement {
            if raw.trim().is_empty() {
                continue;
            }
            let value = raw.trim().parse::<u64>().map_err(|_| CorpusError::Malformed {
                line,
                detail: format!("engagement `{name}` must be a non-negative integer, got `{raw}`"),
            })?;
            engagement.insert(name, value);
        }
        let source_labels = self.labels.into_iter().filter(|(_, v)| !v.trim().is_empty()).collect();
        Ok(Post {
            id: id.trim().to_string(),
            text,
            created_at,
            author_id: self.author_id.filter(|s| !s.is_empty()),
            engagement,
            source_labels,
        })
    }
}

fn read_delimited(text: &str, delimiter: u8, map: &FieldMap) -> Result<Vec<(usize, Post)>, CorpusError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CorpusError::Malformed { line: 1, detail: e.to_string() })?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let column = |name: &str| -> Result<usize, CorpusError> {
        index.get(name).copied().ok_or_else(|| CorpusError::Schema(format!("column `{name}` not found in header")))
    };
    let id_col = column(&map.id)?;
    let text_col = column(&map.text)?;
    // Optional canonical columns may be absent; explicitly mapped extras may not.
    let created_col = map.created_at.as_deref().and_then(|c| index.get(c).copied());
    let author_col = map.author_id.as_deref().and_then(|c| index.get(c).copied());
    let engagement_cols =
        map.engagement.iter().map(|(k, c)| Ok((k.clone(), column(c)?))).collect::<Result<Vec<_>, CorpusError>>()?;
    let label_cols =
        map.labels.iter().map(|(k, c)| Ok((k.clone(), column(c)?))).collect::<Result<Vec<_>, CorpusError>>()?;

    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            CorpusError::Malformed { line, detail: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| record.get(i).map(str::to_string);
        let raw = RawRecord {
            id: cell(id_col),
            text: cell(text_col),
            created_at: created_col.and_then(cell),
            author_id: author_col.and_then(cell),
            engagement: engagement_cols.iter().filter_map(|(k, i)| cell(*i).map(|v| (k.clone(), v))).collect(),
            labels: label_cols.iter().filter_map(|(k, i)| cell(*i).map(|v| (k.clone(), v))).collect(),
        };
        out.push((line, raw.into_post(line)?));
    }
    Ok(out)
}

fn read_jsonl(text: &str, map: &FieldMap) -> Result<Vec<(usize, Post)>, CorpusError> {
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw_line)
            .map_err(|e| CorpusError::Malformed { line, detail: e.to_string() })?;
        let Value::Object(obj) = value else {
            return Err(CorpusError::Malformed { line, detail: "expected a JSON object".into() });
        };
        let scalar = |key: &str| -> Result<Option<String>, CorpusError> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(v @ (Value::Number(_) | Value::Bool(_))) => Ok(Some(v.to_string())),
                Some(_) => Err(CorpusError::Schema(format!(
                    "line {line}: field `{key}` holds a nested value; flatten the input first"
                ))),
            }
        };

        let mut raw = RawRecord {
            id: scalar(&map.id)?,
            text: scalar(&map.text)?,
            created_at: map.created_at.as_deref().map(scalar).transpose()?.flatten(),
            author_id: map.author_id.as_deref().map(scalar).transpose()?.flatten(),
            ..RawRecord::default()
        };
        if let Some(nested) = obj.get("engagement") {
            raw.engagement.extend(flat_map(nested, "engagement", line)?);
        }
        if let Some(nested) = obj.get("source_labels") {
            raw.labels.extend(flat_map(nested, "source_labels", line)?);
        }
        for (name, key) in &map.engagement {
            if let Some(v) = scalar(key)? {
                raw.engagement.push((name.clone(), v));
            }
        }
        for (dimension, key) in &map.labels {
            if let Some(v) = scalar(key)? {
                raw.labels.push((dimension.clone(), v));
            }
        }
        out.push((line, raw.into_post(line)?));
    }
    Ok(out)
}

/// A one-level object of scalars, as used by `engagement` and `source_labels`.
fn flat_map(value: &Value, key: &str, line: usize) -> Result<Vec<(String, String)>, CorpusError> {
    match value {
        Value::Null => Ok(Vec::new()),
        Value::Object(obj) => obj
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k.clone(), s.clone())),
                Value::Number(n) => Ok((k.clone(), n.to_string())),
                _ => Err(CorpusError::Schema(format!("line {line}: `{key}.{k}` must be a scalar"))),
            })
            .collect(),
        _ => Err(CorpusError::Malformed { line, detail: format!("`{key}` must be an object") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jsonl(lines: &[&str]) -> Result<Ingested, CorpusError> {
        ingest_posts(lines.join("\n").as_bytes(), RecordFormat::Jsonl, &FieldMap::default())
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let out = ingest_posts(&b""[..], RecordFormat::Jsonl, &FieldMap::default()).unwrap();
        assert_eq!(out.corpus.len(), 0);
        assert_eq!(out.dropped, 0);
        let out = ingest_posts(&b""[..], RecordFormat::Csv, &FieldMap::default()).unwrap();
        assert_eq!(out.corpus.len(), 0);
    }

    #[test]
    fn excluded_label_is_dropped_and_counted() {
        let out = jsonl(&[
            r#"{"id":"1","text":"stay safe","source_labels":{"disaster_event":"caution_and_advice"}}"#,
            r#"{"id":"2","text":"???","source_labels":{"disaster_event":"dont_know_cant_judge"}}"#,
        ])
        .unwrap();
        assert_eq!(out.corpus.len(), 1);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let err = jsonl(&[r#"{"id":"a","text":"x"}"#, r#"{"id":"b","text":"y"}"#, r#"{"id":"a","text":"z"}"#])
            .unwrap_err();
        match err {
            CorpusError::DuplicateId { id, line } => {
                assert_eq!(id, "a");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = jsonl(&[r#"{"id":"a","text":"x"}"#, "{not json"]).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn nested_values_are_rejected() {
        let err = jsonl(&[r#"{"id":"a","text":{"body":"x"}}"#]).unwrap_err();
        assert!(matches!(err, CorpusError::Schema(_)));
    }

    #[test]
    fn missing_text_column_is_schema_error() {
        let data = "tweet_id\tbody\n1\thello\n";
        let err = ingest_posts(data.as_bytes(), RecordFormat::Tsv, &FieldMap::humaid()).unwrap_err();
        assert!(matches!(err, CorpusError::Schema(_)));
    }

    #[test]
    fn humaid_tsv_layout() {
        let data = "tweet_id\ttweet_text\tclass_label\n\
                    1\tRoads closed near Paradise\tinfrastructure_and_utility_damage\n\
                    2\tPraying for everyone\tsympathy_and_support\n\
                    3\tno idea\tother_relevant_information\n";
        let out = ingest_posts(data.as_bytes(), RecordFormat::Tsv, &FieldMap::humaid()).unwrap();
        assert_eq!(out.corpus.len(), 2);
        assert_eq!(out.dropped, 1);
        assert_eq!(out.corpus.posts()[0].label(DISASTER_EVENT), Some("infrastructure_and_utility_damage"));
    }

    #[test]
    fn csv_engagement_and_timestamps() {
        let map = FieldMap {
            created_at: Some("date".into()),
            engagement: BTreeMap::from([("likes".into(), "likes".into())]),
            ..FieldMap::default()
        };
        let data = "id,text,date,likes\n1,hello,2018-11-08 10:00:00,5\n2,world,,\n";
        let out = ingest_posts(data.as_bytes(), RecordFormat::Csv, &map).unwrap();
        let p = &out.corpus.posts()[0];
        assert_eq!(p.engagement["likes"], 5);
        assert_eq!(p.created_at.unwrap().to_rfc3339(), "2018-11-08T10:00:00+00:00");
        assert!(out.corpus.posts()[1].created_at.is_none());

        let bad = "id,text,date,likes\n1,hello,,-3\n";
        let err = ingest_posts(bad.as_bytes(), RecordFormat::Csv, &map).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn timestamp_formats() {
        for raw in ["2018-11-08T10:00:00Z", "2018-11-08 10:00:00", "Thu Nov 08 10:00:00 +0000 2018", "1541671200"] {
            assert_eq!(parse_timestamp(raw).unwrap().to_rfc3339(), "2018-11-08T10:00:00+00:00", "{raw}");
        }
        assert!(parse_timestamp("yesterday").is_none());
    }
}
