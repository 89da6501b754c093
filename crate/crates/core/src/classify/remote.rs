use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClassDistribution, ClassifierBackend, ClassifyError, DimensionSchema};
use crate::corpus::Post;
use crate::gateway::HttpEndpoint;

/// Responses whose sums fall inside this band are rescaled; others are
/// rejected.
const SUM_BAND: (f64, f64) = (0.99, 1.01);

#[derive(Serialize)]
struct InferenceRequest<'a> {
    dimension: &'a str,
    classes: &'a [String],
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct InferenceResponse {
    distributions: Vec<Row>,
}

/// Rows are normally arrays aligned with the request's class list; keyed
/// objects are accepted too.
#[derive(Deserialize)]
#[serde(untagged)]
enum Row {
    Ordered(Vec<f64>),
    Keyed(BTreeMap<String, f64>),
}

/// Classifies `batch` through a remote inference endpoint.
pub fn remote_classify(batch: &[&Post], schema: &DimensionSchema, endpoint: &HttpEndpoint) -> Result<Vec<ClassDistribution>, ClassifyError> {
    if batch.is_empty() {
        return Err(ClassifyError::Config("remote_classify needs a non-empty batch".into()));
    }
    let request = InferenceRequest {
        dimension: &schema.name,
        classes: &schema.classes,
        texts: batch.iter().map(|p| p.text.as_str()).collect(),
    };
    let response: InferenceResponse = endpoint.post_json(&request).map_err(|e| match e {
        crate::gateway::GatewayError::Protocol(msg) => ClassifyError::Protocol(msg),
        other => ClassifyError::Gateway(other),
    })?;
    if response.distributions.len() != batch.len() {
        return Err(ClassifyError::Protocol(format!(
            "{} distributions returned for {} texts",
            response.distributions.len(),
            batch.len()
        )));
    }
    response
        .distributions
        .into_iter()
        .zip(batch)
        .map(|(row, post)| {
            let scores = align(row, schema).map_err(|msg| ClassifyError::Protocol(format!("post `{}`: {msg}", post.id)))?;
            renormalize(schema, scores).map_err(|e| match e {
                ClassifyError::Validation(msg) => ClassifyError::Validation(format!("post `{}`: {msg}", post.id)),
                other => other,
            })
        })
        .collect()
}

fn align(row: Row, schema: &DimensionSchema) -> Result<BTreeMap<String, f64>, String> {
    match row {
        Row::Ordered(values) => {
            if values.len() != schema.classes.len() {
                return Err(format!("expected {} probabilities, got {}", schema.classes.len(), values.len()));
            }
            Ok(schema.classes.iter().cloned().zip(values).collect())
        }
        Row::Keyed(map) => {
            if let Some(missing) = schema.classes.iter().find(|c| !map.contains_key(*c)) {
                return Err(format!("missing class `{missing}`"));
            }
            if let Some(extra) = map.keys().find(|k| !schema.has_class(k)) {
                return Err(format!("unknown class `{extra}`"));
            }
            Ok(map)
        }
    }
}

fn renormalize(schema: &DimensionSchema, scores: BTreeMap<String, f64>) -> Result<ClassDistribution, ClassifyError> {
    if let Some((c, p)) = scores.iter().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(ClassifyError::Validation(format!("probability for `{c}` is {p}")));
    }
    let sum: f64 = scores.values().sum();
    if !(SUM_BAND.0..=SUM_BAND.1).contains(&sum) {
        return Err(ClassifyError::Validation(format!("probabilities sum to {sum}, outside [{}, {}]", SUM_BAND.0, SUM_BAND.1)));
    }
    ClassDistribution::normalized(schema, scores)
}

/// [`ClassifierBackend`] over [`remote_classify`].
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    endpoint: HttpEndpoint,
}

impl RemoteBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        RemoteBackend { endpoint }
    }
}

impl ClassifierBackend for RemoteBackend {
    fn classify_batch(&self, posts: &[&Post], schema: &DimensionSchema) -> Result<Vec<ClassDistribution>, ClassifyError> {
        if posts.is_empty() {
            return Ok(Vec::new());
        }
        remote_classify(posts, schema, &self.endpoint)
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn content_type() -> DimensionSchema {
        DimensionSchema::builtin("content_type").unwrap()
    }

    #[test]
    fn keyed_row_missing_class_is_protocol_error() {
        let row = Row::Keyed(BTreeMap::from([("news".to_string(), 0.5)]));
        assert!(align(row, &content_type()).is_err());
    }

    #[test]
    fn near_unit_sums_are_rescaled() {
        let scores = BTreeMap::from([("news".to_string(), 0.705), ("opinion".to_string(), 0.3)]);
        let d = renormalize(&content_type(), scores).unwrap();
        assert!((d.probs["news"] - 0.705 / 1.005).abs() < 1e-15);
        assert!((d.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_sums_are_rejected() {
        let scores = BTreeMap::from([("news".to_string(), 0.9), ("opinion".to_string(), 0.3)]);
        assert!(matches!(renormalize(&content_type(), scores), Err(ClassifyError::Validation(_))));
    }
}
