//! Report evaluation: n-gram, lexical and embedding similarity against the
//! source posts, plus LLM-judge coverage and quality protocols.
mod compare;
mod judge;
mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;

pub use compare::{aggregate_tables, compare_modes, CompareOptions, ComparisonRow, ComparisonTable};
pub use judge::{
    coverage_judge, coverage_prompt, judge_quality, parse_verdicts, quality_prompt, ContainmentJudge, CoverageResult,
    JudgeRun, QualityScores, DEFAULT_JUDGE_CONCURRENCY, DEFAULT_REPETITIONS, QUALITY_CRITERIA,
};
pub use metrics::{
    cosine, embedding_cosine, lcs_len, rouge_l, rouge_l_tokens, rouge_n, rouge_n_tokens, tfidf_cosine, Prf, TfidfScore,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("unexpected reply: {0}")]
    Protocol(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge failed: {0}")]
    Judge(String),
    #[error("reports come from different corpora: {basic} vs {advanced}")]
    CorpusMismatch { basic: String, advanced: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rouge1,
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    TfidfCosine,
    EmbeddingCosine,
    Coverage,
    JudgeCriteria,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rouge1 => "rouge1",
            Metric::Rouge2 => "rouge2",
            Metric::RougeL => "rougeL",
            Metric::TfidfCosine => "tfidf_cosine",
            Metric::EmbeddingCosine => "embedding_cosine",
            Metric::Coverage => "coverage",
            Metric::JudgeCriteria => "judge_criteria",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Scalar(f64),
    Criteria(BTreeMap<String, u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric: Metric,
    pub value: MetricValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Prf>,
    pub preprocessing: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<JudgeRun>,
}

impl MetricScore {
    pub fn scalar(&self) -> Option<f64> {
        match self.value {
            MetricValue::Scalar(v) => Some(v),
            MetricValue::Criteria(_) => None,
        }
    }
}

pub const TOKEN_PREPROCESSING: &str = "lowercase, split on non-alphanumeric";
pub const STEM_PREPROCESSING: &str = "lowercase, stop-word removal, Snowball English stemmer, 2-document smoothed IDF";

/// Similarity metrics of `candidate` against `reference`.
pub fn text_metrics(candidate: &str, reference: &str) -> Vec<MetricScore> {
    let prf = |metric, p: Prf| MetricScore {
        metric,
        value: MetricValue::Scalar(p.f1),
        components: Some(p),
        preprocessing: TOKEN_PREPROCESSING.into(),
        runs: Vec::new(),
    };
    let tfidf = tfidf_cosine(candidate, reference);
    vec![
        prf(Metric::Rouge1, rouge_n(candidate, reference, 1).expect("n = 1 is supported")),
        prf(Metric::Rouge2, rouge_n(candidate, reference, 2).expect("n = 2 is supported")),
        prf(Metric::RougeL, rouge_l(candidate, reference)),
        MetricScore {
            metric: Metric::TfidfCosine,
            value: MetricValue::Scalar(tfidf.value),
            components: None,
            preprocessing: if tfidf.degenerate { format!("{STEM_PREPROCESSING}; degenerate input") } else { STEM_PREPROCESSING.into() },
            runs: Vec::new(),
        },
    ]
}
