use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::judge::{coverage_judge, judge_quality, DEFAULT_JUDGE_CONCURRENCY, DEFAULT_REPETITIONS};
use super::{embedding_cosine, text_metrics, EvalError, Metric, MetricScore, MetricValue, QUALITY_CRITERIA};
use crate::corpus::Corpus;
use crate::gateway::{ChatGateway, Embedder};
use crate::reportgen::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub repetitions: usize,
    pub concurrency: usize,
    /// Also run the five-criterion quality judge.
    pub quality: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions { repetitions: DEFAULT_REPETITIONS, concurrency: DEFAULT_JUDGE_CONCURRENCY, quality: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub basic: f64,
    pub advanced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub event: String,
    pub corpus_id: String,
    pub rows: Vec<ComparisonRow>,
    #[serde(default)]
    pub basic_scores: Vec<MetricScore>,
    #[serde(default)]
    pub advanced_scores: Vec<MetricScore>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ComparisonTable {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Fixed-width text rendering, one metric per line.
    pub fn render_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{} ({})", self.event, self.corpus_id);
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "metric", "basic", "advanced");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>8.4}  {:>8.4}", r.metric, r.basic, r.advanced);
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn score_report(
    report: &Report,
    corpus: &Corpus,
    reference: &str,
    items: &[String],
    judge: &dyn ChatGateway,
    embedder: Option<&dyn Embedder>,
    options: &CompareOptions,
    warnings: &mut Vec<String>,
) -> Result<Vec<MetricScore>, EvalError> {
    let mut scores = text_metrics(&report.body, reference);
    if let Some(embedder) = embedder {
        scores.push(MetricScore {
            metric: Metric::EmbeddingCosine,
            value: MetricValue::Scalar(embedding_cosine(&report.body, reference, embedder)?),
            components: None,
            preprocessing: "raw text, cosine clamped to [0, 1]".into(),
            runs: Vec::new(),
        });
    }
    if !items.is_empty() {
        let coverage = coverage_judge(&report.body, items, judge, options.repetitions, options.concurrency)?;
        warnings.extend(coverage.warnings.iter().map(|w| format!("{}: {w}", report.input_manifest.mode)));
        scores.push(MetricScore {
            metric: Metric::Coverage,
            value: MetricValue::Scalar(coverage.coverage),
            components: None,
            preprocessing: format!("{} items, {} repetitions", items.len(), options.repetitions),
            runs: coverage.runs,
        });
    }
    if options.quality {
        let sources: Vec<&str> =
            report.input_manifest.post_ids.iter().filter_map(|id| corpus.get(id)).map(|p| p.text.as_str()).collect();
        let quality = judge_quality(&report.body, &sources, judge)?;
        scores.push(MetricScore {
            metric: Metric::JudgeCriteria,
            value: MetricValue::Criteria(quality.scores),
            components: None,
            preprocessing: format!("judge {}", quality.model),
            runs: Vec::new(),
        });
    }
    Ok(scores)
}

fn flatten(scores: &[MetricScore]) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for s in scores {
        match &s.value {
            MetricValue::Scalar(v) => out.push((s.metric.name().to_string(), *v)),
            MetricValue::Criteria(map) => {
                for c in QUALITY_CRITERIA {
                    if let Some(v) = map.get(c) {
                        out.push((format!("judge_{c}"), f64::from(*v)));
                    }
                }
            }
        }
    }
    out
}

/// Scores both reports against the corpus reference text and lays the
/// metrics out side by side. The judge never sees which mode produced a
/// report.
pub fn compare_modes(
    basic: &Report,
    advanced: &Report,
    corpus: &Corpus,
    items: &[String],
    judge: &dyn ChatGateway,
    embedder: Option<&dyn Embedder>,
    options: &CompareOptions,
) -> Result<ComparisonTable, EvalError> {
    let (b, a) = (&basic.input_manifest.corpus_id, &advanced.input_manifest.corpus_id);
    if b != a || *b != corpus.corpus_id {
        return Err(EvalError::CorpusMismatch {
            basic: b.clone(),
            advanced: if b != a { a.clone() } else { corpus.corpus_id.clone() },
        });
    }
    let reference = corpus.reference_text();
    let mut warnings = Vec::new();
    let basic_scores = score_report(basic, corpus, &reference, items, judge, embedder, options, &mut warnings)?;
    let advanced_scores = score_report(advanced, corpus, &reference, items, judge, embedder, options, &mut warnings)?;
    let rows = flatten(&basic_scores)
        .into_iter()
        .zip(flatten(&advanced_scores))
        .map(|((metric, basic), (_, advanced))| ComparisonRow { metric, basic, advanced })
        .collect();
    Ok(ComparisonTable {
        event: corpus.event_name.clone(),
        corpus_id: corpus.corpus_id.clone(),
        rows,
        basic_scores,
        advanced_scores,
        warnings,
    })
}

/// Unweighted mean over tables, for metrics present in every table.
pub fn aggregate_tables(label: &str, tables: &[ComparisonTable]) -> Result<ComparisonTable, EvalError> {
    let first = tables.first().ok_or_else(|| EvalError::Validation("no tables to aggregate".into()))?;
    let n = tables.len() as f64;
    let rows = first
        .rows
        .iter()
        .filter_map(|row| {
            let matches: Vec<&ComparisonRow> = tables.iter().filter_map(|t| t.row(&row.metric)).collect();
            (matches.len() == tables.len()).then(|| ComparisonRow {
                metric: row.metric.clone(),
                basic: matches.iter().map(|r| r.basic).sum::<f64>() / n,
                advanced: matches.iter().map(|r| r.advanced).sum::<f64>() / n,
            })
        })
        .collect();
    Ok(ComparisonTable {
        event: label.to_string(),
        corpus_id: tables.iter().map(|t| t.corpus_id.as_str()).collect::<Vec<_>>().join("+"),
        rows,
        basic_scores: Vec::new(),
        advanced_scores: Vec::new(),
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use crate::evalsuite::ContainmentJudge;
    use crate::gateway::{HashingEmbedder, ScriptedGateway};
    use crate::reportgen::{generate_report, HeuristicEstimator, ReportInputs, ReportKind, ReportMode, ReportRequest, TokenBudget};

    fn corpus() -> Corpus {
        Corpus::new(
            "c1",
            "Camp Fire",
            "California",
            Default::default(),
            vec![Post::new("p1", "Smoke over Paradise"), Post::new("p2", "Shelter open in Chico")],
        )
        .unwrap()
    }

    fn report(mode: ReportMode, body: &str, corpus: &Corpus) -> Report {
        let gw = ScriptedGateway::constant(body);
        let mut req = ReportRequest::new(mode, ReportKind::Topics, "Camp Fire", "California", "November 2018");
        req.word_limit = 100;
        let refs: Vec<&Post> = corpus.posts().iter().collect();
        let inputs = match mode {
            ReportMode::Basic => ReportInputs::Basic { corpus_id: &corpus.corpus_id, posts: corpus.posts() },
            ReportMode::Advanced => ReportInputs::Advanced { corpus_id: &corpus.corpus_id, posts: &refs },
        };
        generate_report(&req, inputs, &gw, &TokenBudget::default(), &HeuristicEstimator).unwrap()
    }

    #[test]
    fn identical_reports_have_identical_rows() {
        let c = corpus();
        let b = report(ReportMode::Basic, "Smoke over Paradise.", &c);
        let a = report(ReportMode::Advanced, "Smoke over Paradise.", &c);
        let items = vec!["smoke".to_string(), "shelter".to_string()];
        let t = compare_modes(&b, &a, &c, &items, &ContainmentJudge, Some(&HashingEmbedder::default()), &CompareOptions::default())
            .unwrap();
        assert!(t.rows.iter().all(|r| r.basic == r.advanced), "{t:?}");
        assert_eq!(t.row("coverage").unwrap().basic, 0.5);
        assert!(t.row("embedding_cosine").is_some());
        assert!(t.render_text().contains("rougeL"));
        assert_eq!(ComparisonTable::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn broader_report_covers_more() {
        let c = corpus();
        let b = report(ReportMode::Basic, "Smoke over Paradise.", &c);
        let a = report(ReportMode::Advanced, "Smoke over Paradise. A shelter opened in Chico.", &c);
        let items = vec!["smoke".to_string(), "shelter".to_string()];
        let t = compare_modes(&b, &a, &c, &items, &ContainmentJudge, None, &CompareOptions::default()).unwrap();
        let row = t.row("coverage").unwrap();
        assert!(row.advanced > row.basic);
    }

    #[test]
    fn corpus_mismatch_is_an_error() {
        let c = corpus();
        let mut other = corpus();
        other.corpus_id = "c2".into();
        let b = report(ReportMode::Basic, "x", &c);
        let a = report(ReportMode::Advanced, "x", &other);
        let err = compare_modes(&b, &a, &c, &[], &ContainmentJudge, None, &CompareOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::CorpusMismatch { .. }));
    }

    #[test]
    fn aggregate_is_unweighted_mean() {
        let t = |id: &str, b: f64, a: f64| ComparisonTable {
            event: id.into(),
            corpus_id: id.into(),
            rows: vec![ComparisonRow { metric: "coverage".into(), basic: b, advanced: a }],
            basic_scores: vec![],
            advanced_scores: vec![],
            warnings: vec![],
        };
        let m = aggregate_tables("wildfires", &[t("a", 0.2, 0.8), t("b", 0.4, 1.0)]).unwrap();
        let row = m.row("coverage").unwrap();
        assert!((row.basic - 0.3).abs() < 1e-12 && (row.advanced - 0.9).abs() < 1e-12);
        assert!(aggregate_tables("x", &[]).is_err());
    }

    #[test]
    fn quality_rows_expand_per_criterion() {
        let c = corpus();
        let b = report(ReportMode::Basic, "x", &c);
        let a = report(ReportMode::Advanced, "x", &c);
        let judge = ScriptedGateway::constant(r#"{"informative":5,"quality":5,"coherence":5,"attributable":5,"overall":5}"#);
        let opts = CompareOptions { quality: true, ..Default::default() };
        let t = compare_modes(&b, &a, &c, &[], &judge, None, &opts).unwrap();
        assert_eq!(t.row("judge_overall").unwrap().advanced, 5.0);
    }
}
