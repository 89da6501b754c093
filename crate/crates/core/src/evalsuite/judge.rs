use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayError};
use crate::reportgen::numbered_posts;
use crate::text::tokenize;

const COVERAGE_TEMPLATE: &str = include_str!("../../assets/prompts/coverage_judge.txt");
const QUALITY_TEMPLATE: &str = include_str!("../../assets/prompts/quality_judge.txt");

pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_JUDGE_CONCURRENCY: usize = 4;
pub const QUALITY_CRITERIA: [&str; 5] = ["informative", "quality", "coherence", "attributable", "overall"];

/// The coverage prompt for one judge call. It carries only the items and
/// the report body.
pub fn coverage_prompt(report: &str, items: &[String]) -> String {
    let listed: Vec<&str> = items.iter().map(String::as_str).collect();
    COVERAGE_TEMPLATE
        .replace("$COUNT", &items.len().to_string())
        .replace("$ITEMS", &numbered_posts(&listed))
        .replace("$REPORT", report)
}

pub fn quality_prompt(report: &str, source_posts: &[&str]) -> String {
    QUALITY_TEMPLATE.replace("$POSTS", &numbered_posts(source_posts)).replace("$REPORT", report)
}

/// Strict parse: a JSON array of exactly `n` booleans.
pub fn parse_verdicts(reply: &str, n: usize) -> Result<Vec<bool>, String> {
    let verdicts: Vec<bool> = serde_json::from_str(reply.trim()).map_err(|e| e.to_string())?;
    if verdicts.len() != n {
        return Err(format!("expected {n} verdicts, got {}", verdicts.len()));
    }
    Ok(verdicts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRun {
    pub repetition: usize,
    pub attempts: usize,
    pub valid: bool,
    #[serde(default)]
    pub verdicts: Option<Vec<bool>>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    /// Mean of the valid runs' covered fractions.
    pub coverage: f64,
    pub runs: Vec<JudgeRun>,
    pub warnings: Vec<String>,
}

fn judge_once(report: &str, items: &[String], gateway: &dyn ChatGateway, repetition: usize) -> JudgeRun {
    let request = ChatRequest::new(gateway.model(), vec![ChatMessage::user(coverage_prompt(report, items))]);
    let mut last_error = String::new();
    for attempt in 1..=2 {
        match gateway.complete(&request).map_err(|e| e.to_string()).and_then(|r| parse_verdicts(&r, items.len())) {
            Ok(verdicts) => {
                let covered = verdicts.iter().filter(|v| **v).count();
                return JudgeRun {
                    repetition,
                    attempts: attempt,
                    valid: true,
                    fraction: Some(covered as f64 / items.len() as f64),
                    verdicts: Some(verdicts),
                    error: None,
                };
            }
            Err(e) => last_error = e,
        }
    }
    JudgeRun { repetition, attempts: 2, valid: false, verdicts: None, fraction: None, error: Some(last_error) }
}

/// Runs `repetitions` independent judge calls, at most `concurrency` at a
/// time. A run whose reply does not parse is retried once and then left out.
pub fn coverage_judge(
    report: &str,
    items: &[String],
    gateway: &dyn ChatGateway,
    repetitions: usize,
    concurrency: usize,
) -> Result<CoverageResult, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Validation("coverage needs at least one item".into()));
    }
    if repetitions == 0 {
        return Err(EvalError::Validation("repetitions must be positive".into()));
    }
    let next = AtomicUsize::new(0);
    let runs = Mutex::new(Vec::with_capacity(repetitions));
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, repetitions) {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::SeqCst);
                if rep >= repetitions {
                    break;
                }
                let run = judge_once(report, items, gateway, rep);
                runs.lock().expect("judge results poisoned").push(run);
            });
        }
    });
    let mut runs = runs.into_inner().expect("judge results poisoned");
    runs.sort_by_key(|r| r.repetition);
    let warnings: Vec<String> = runs
        .iter()
        .filter(|r| !r.valid)
        .map(|r| format!("judge run {} excluded: {}", r.repetition, r.error.as_deref().unwrap_or("invalid")))
        .collect();
    let valid: Vec<f64> = runs.iter().filter_map(|r| r.fraction).collect();
    if valid.is_empty() {
        return Err(EvalError::Judge(format!("all {repetitions} judge runs were invalid")));
    }
    Ok(CoverageResult { coverage: valid.iter().sum::<f64>() / valid.len() as f64, runs, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub scores: BTreeMap<String, u8>,
    pub model: String,
    pub raw: String,
}

/// One judge call scoring the five criteria from 1 to 5.
pub fn judge_quality(report: &str, source_posts: &[&str], gateway: &dyn ChatGateway) -> Result<QualityScores, EvalError> {
    let request = ChatRequest::new(gateway.model(), vec![ChatMessage::user(quality_prompt(report, source_posts))]);
    let raw = gateway.complete(&request)?;
    let parsed: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(raw.trim()).map_err(|e| EvalError::Protocol(format!("judge reply is not a JSON object: {e}")))?;
    let mut scores = BTreeMap::new();
    for criterion in QUALITY_CRITERIA {
        let value = parsed.get(criterion).ok_or_else(|| EvalError::Protocol(format!("missing criterion `{criterion}`")))?;
        let n = value
            .as_f64()
            .filter(|v| v.fract() == 0.0)
            .ok_or_else(|| EvalError::Validation(format!("`{criterion}` is not an integer: {value}")))?;
        if !(1.0..=5.0).contains(&n) {
            return Err(EvalError::Validation(format!("`{criterion}` = {n} is outside 1..=5")));
        }
        scores.insert(criterion.to_string(), n as u8);
    }
    Ok(QualityScores { scores, model: gateway.model().to_string(), raw })
}

/// Deterministic coverage judge: an item counts as covered when every one
/// of its tokens occurs in the report. It reads the items and the report
/// back out of the coverage prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentJudge;

impl ContainmentJudge {
    pub fn verdicts(report: &str, items: &[String]) -> Vec<bool> {
        let words: std::collections::HashSet<String> = tokenize(report).into_iter().collect();
        items
            .iter()
            .map(|item| {
                let tokens = tokenize(item);
                !tokens.is_empty() && tokens.iter().all(|t| words.contains(t))
            })
            .collect()
    }

    fn split_prompt(prompt: &str) -> Option<(Vec<String>, &str)> {
        let (_, rest) = prompt.split_once("Reference items:\n")?;
        let (items, rest) = rest.split_once("\n\nReport:\n")?;
        let report = rest.rsplit_once("\n\nFor each reference item").map_or(rest, |(r, _)| r);
        let items = items
            .lines()
            .map(|l| l.split_once(". ").map_or(l, |(_, item)| item).to_string())
            .collect();
        Some((items, report))
    }
}

impl ChatGateway for ContainmentJudge {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let prompt = request.last_user().ok_or_else(|| GatewayError::Protocol("no user message".into()))?;
        let (items, report) =
            Self::split_prompt(prompt).ok_or_else(|| GatewayError::Protocol("not a coverage prompt".into()))?;
        Ok(serde_json::to_string(&Self::verdicts(report, &items)).expect("bools serialize"))
    }

    fn model(&self) -> &str {
        "containment-judge"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedGateway;

    fn items(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("item {i}")).collect()
    }

    #[test]
    fn all_true_is_full_coverage() {
        let gw = ScriptedGateway::constant("[true, true, true]");
        let r = coverage_judge("report", &items(3), &gw, 10, 4).unwrap();
        assert_eq!(r.coverage, 1.0);
        assert_eq!(r.runs.len(), 10);
        assert_eq!(gw.calls(), 10);
    }

    #[test]
    fn alternating_verdicts_average_half() {
        let gw = ScriptedGateway::constant("[true, false, true, false]");
        assert_eq!(coverage_judge("r", &items(4), &gw, 10, 3).unwrap().coverage, 0.5);
    }

    #[test]
    fn unparsable_runs_retry_then_drop() {
        // every odd call is garbage: each run's first attempt fails only on odd indices
        let gw = ScriptedGateway::from_fn(|_, i| Ok(if i == 0 || i == 1 { "nope".into() } else { "[true, false]".into() }));
        let r = coverage_judge("r", &items(2), &gw, 3, 1).unwrap();
        assert_eq!(r.runs.iter().filter(|x| !x.valid).count(), 1);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.coverage, 0.5);
        let bad = ScriptedGateway::constant("true");
        assert!(matches!(coverage_judge("r", &items(2), &bad, 2, 2), Err(EvalError::Judge(_))));
    }

    #[test]
    fn quality_scores_validated() {
        let ok = ScriptedGateway::constant(r#"{"informative":4,"quality":3,"coherence":5,"attributable":4,"overall":4}"#);
        let s = judge_quality("r", &["p"], &ok).unwrap();
        assert_eq!(s.scores.values().copied().collect::<Vec<_>>(), vec![4, 5, 4, 4, 3]);
        let bad = ScriptedGateway::constant(r#"{"informative":6,"quality":3,"coherence":5,"attributable":4,"overall":4}"#);
        assert!(matches!(judge_quality("r", &["p"], &bad), Err(EvalError::Validation(_))));
    }

    #[test]
    fn containment_judge_reads_the_prompt() {
        let its = vec!["roads closed".to_string(), "shelter".to_string(), "looting".to_string()];
        let prompt = coverage_prompt("Crews said roads were closed. A shelter opened.", &its);
        let reply = ContainmentJudge.complete(&ChatRequest::new("m", vec![ChatMessage::user(prompt)])).unwrap();
        assert_eq!(reply, "[true,true,false]");
    }
}
