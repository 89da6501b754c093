//! Report generation from the prompt templates, under a token budget, with
//! post references and grounded follow-up chat.

mod budget;
mod chat;
mod prompt;
mod references;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Post;
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayError};

pub use budget::{token_estimate, HeuristicEstimator, TokenBudget, TokenEstimator, DEFAULT_CONTEXT_CAP, DEFAULT_OUTPUT_RESERVE};
pub use chat::{chat_turn, ChatReply, ChatSession, ChatTurn, Grounding, CHAT_SYSTEM_PREAMBLE};
pub use prompt::{numbered_posts, render_prompt, template, PromptParams, TEMPLATE_VERSION};
pub use references::{attach_references, citation_markers, Reference, EXCERPT_CHARS};

/// Introduces the basic-mode attachment after the prompt.
pub const ATTACHMENT_HEADER: &str = "Attached file (posts.jsonl):";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("invalid report request: {0}")]
    Validation(String),
    #[error("prompt needs {needed} tokens but only {available} fit in the context")]
    Budget { needed: usize, available: usize },
    #[error("generation failed: {0}")]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMode {
    Basic,
    Advanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Topics,
    Opinions,
    CitySubevents,
}

impl fmt::Display for ReportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportMode::Basic => "basic",
            ReportMode::Advanced => "advanced",
        })
    }
}

impl FromStr for ReportMode {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "basic" => Ok(ReportMode::Basic),
            "advanced" => Ok(ReportMode::Advanced),
            other => Err(ReportError::Validation(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportKind::Topics => "topics",
            ReportKind::Opinions => "opinions",
            ReportKind::CitySubevents => "city_subevents",
        })
    }
}

impl FromStr for ReportKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "topics" => Ok(ReportKind::Topics),
            "opinions" => Ok(ReportKind::Opinions),
            "city_subevents" => Ok(ReportKind::CitySubevents),
            other => Err(ReportError::Validation(format!("unknown report kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub mode: ReportMode,
    pub report_kind: ReportKind,
    pub event: String,
    pub area: String,
    pub date_range: String,
    #[serde(default)]
    pub city: Option<String>,
    pub word_limit: u32,
    #[serde(default)]
    pub stakeholders: Vec<String>,
}

pub const DEFAULT_WORD_LIMIT: u32 = 500;

impl ReportRequest {
    pub fn new(
        mode: ReportMode,
        report_kind: ReportKind,
        event: impl Into<String>,
        area: impl Into<String>,
        date_range: impl Into<String>,
    ) -> Self {
        ReportRequest {
            mode,
            report_kind,
            event: event.into(),
            area: area.into(),
            date_range: date_range.into(),
            city: None,
            word_limit: DEFAULT_WORD_LIMIT,
            stakeholders: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.word_limit == 0 {
            return Err(ReportError::Validation("word limit must be positive".into()));
        }
        if self.report_kind == ReportKind::CitySubevents && self.city.as_deref().is_none_or(|c| c.trim().is_empty()) {
            return Err(ReportError::Validation("city_subevents reports need a city".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> PromptParams {
        PromptParams {
            event: self.event.clone(),
            area: self.area.clone(),
            date_range: self.date_range.clone(),
            word_limit: self.word_limit,
            city: self.city.clone(),
        }
    }
}

/// Posts handed to the model. Basic mode gets the whole corpus (a prefix of
/// it survives the budget); advanced mode gets the sample, in sample order.
#[derive(Debug, Clone, Copy)]
pub enum ReportInputs<'a> {
    Basic { corpus_id: &'a str, posts: &'a [Post] },
    Advanced { corpus_id: &'a str, posts: &'a [&'a Post] },
}

impl ReportInputs<'_> {
    pub fn mode(&self) -> ReportMode {
        match self {
            ReportInputs::Basic { .. } => ReportMode::Basic,
            ReportInputs::Advanced { .. } => ReportMode::Advanced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub included: usize,
    pub truncated: usize,
    /// First post left out, if any.
    pub first_excluded: Option<String>,
    pub available_tokens: usize,
    pub used_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputManifest {
    pub mode: ReportMode,
    pub corpus_id: String,
    pub post_ids: Vec<String>,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    pub prompt_hash: String,
    pub template_version: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub request: ReportRequest,
    pub body: String,
    pub references: Vec<Reference>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub input_manifest: InputManifest,
    pub created_at: DateTime<Utc>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One line of the basic-mode attachment.
pub fn attachment_line(post: &Post) -> String {
    serde_json::json!({ "id": post.id, "text": post.text }).to_string()
}

/// The posts that fit after the prompt, header and output reserve, taken
/// as a prefix of `posts`. Each line costs the estimate of the line plus
/// its newline.
pub fn basic_prefix(prompt: &str, posts: &[Post], budget: &TokenBudget, estimator: &dyn TokenEstimator) -> Result<Truncation, ReportError> {
    let fixed = estimator.estimate(prompt) + estimator.estimate(&format!("\n\n{ATTACHMENT_HEADER}\n"));
    let limit = budget.input_limit();
    if fixed > limit {
        return Err(ReportError::Budget { needed: fixed, available: limit });
    }
    let available = limit - fixed;
    let mut used = 0;
    let mut included = 0;
    for post in posts {
        let cost = estimator.estimate(&format!("{}\n", attachment_line(post)));
        if used + cost > available {
            break;
        }
        used += cost;
        included += 1;
    }
    Ok(Truncation {
        included,
        truncated: posts.len() - included,
        first_excluded: posts.get(included).map(|p| p.id.clone()),
        available_tokens: available,
        used_tokens: used,
    })
}

/// Chat request, numbered source `(post id, text)` pairs, and the basic-mode
/// truncation if any.
pub type BuiltRequest = (ChatRequest, Vec<(String, String)>, Option<Truncation>);

/// Builds the messages for one report without calling the model.
pub fn build_request(
    request: &ReportRequest,
    inputs: ReportInputs<'_>,
    model: &str,
    budget: &TokenBudget,
    estimator: &dyn TokenEstimator,
) -> Result<BuiltRequest, ReportError> {
    request.validate()?;
    budget.validate()?;
    if request.mode != inputs.mode() {
        return Err(ReportError::Validation(format!("request is {} but inputs are {}", request.mode, inputs.mode())));
    }
    let params = request.params();
    let (content, sources, truncation) = match inputs {
        ReportInputs::Basic { posts, .. } => {
            let prompt = render_prompt(request.report_kind, ReportMode::Basic, &params, None)?;
            let cut = basic_prefix(&prompt, posts, budget, estimator)?;
            let kept = &posts[..cut.included];
            let mut content = format!("{prompt}\n\n{ATTACHMENT_HEADER}\n");
            for p in kept {
                content.push_str(&attachment_line(p));
                content.push('\n');
            }
            let sources = kept.iter().map(|p| (p.id.clone(), p.text.clone())).collect();
            (content, sources, Some(cut))
        }
        ReportInputs::Advanced { posts, .. } => {
            if posts.is_empty() {
                return Err(ReportError::Validation("advanced mode needs a non-empty sample".into()));
            }
            let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
            let content = render_prompt(request.report_kind, ReportMode::Advanced, &params, Some(&texts))?;
            let needed = estimator.estimate(&content);
            if needed > budget.input_limit() {
                return Err(ReportError::Budget { needed, available: budget.input_limit() });
            }
            let sources = posts.iter().map(|p| (p.id.clone(), p.text.clone())).collect();
            (content, sources, None)
        }
    };
    let mut chat = ChatRequest::new(model, vec![ChatMessage::user(content)]);
    chat.max_tokens = budget.output_reserve;
    Ok((chat, sources, truncation))
}

/// Renders the prompt, calls the gateway once and attaches references.
pub fn generate_report(
    request: &ReportRequest,
    inputs: ReportInputs<'_>,
    gateway: &dyn ChatGateway,
    budget: &TokenBudget,
    estimator: &dyn TokenEstimator,
) -> Result<Report, ReportError> {
    let corpus_id = match inputs {
        ReportInputs::Basic { corpus_id, .. } | ReportInputs::Advanced { corpus_id, .. } => corpus_id.to_string(),
    };
    let (chat, sources, truncation) = build_request(request, inputs, gateway.model(), budget, estimator)?;
    let prompt_hash = sha256_hex(serde_json::to_string(&chat.messages).expect("messages serialize").as_bytes());
    let body = gateway.complete(&chat)?;
    let candidates: Vec<(&str, &str)> = sources.iter().map(|(id, t)| (id.as_str(), t.as_str())).collect();
    let (references, warnings) = attach_references(&body, &candidates);
    let id = sha256_hex(format!("{prompt_hash}\n{body}").as_bytes())[..16].to_string();
    Ok(Report {
        id,
        request: request.clone(),
        body,
        references,
        warnings,
        input_manifest: InputManifest {
            mode: request.mode,
            corpus_id,
            post_ids: sources.into_iter().map(|(id, _)| id).collect(),
            truncation,
            prompt_hash,
            template_version: TEMPLATE_VERSION.to_string(),
            model: gateway.model().to_string(),
        },
        created_at: Utc::now(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EchoGateway, ScriptedGateway};

    fn request(mode: ReportMode, kind: ReportKind) -> ReportRequest {
        ReportRequest {
            mode,
            report_kind: kind,
            event: "Camp Fire".into(),
            area: "Butte County, California".into(),
            date_range: "2018-11-08 to 2018-11-25".into(),
            city: Some("Paradise".into()),
            word_limit: 300,
            stakeholders: vec![],
        }
    }

    fn posts(n: usize) -> Vec<Post> {
        (0..n).map(|i| Post::new(format!("p{i}"), format!("post number {i} about the fire"))).collect()
    }

    #[test]
    fn echo_body_carries_parameters() {
        let p = posts(3);
        let r = generate_report(
            &request(ReportMode::Basic, ReportKind::Topics),
            ReportInputs::Basic { corpus_id: "c", posts: &p },
            &EchoGateway,
            &TokenBudget::default(),
            &HeuristicEstimator,
        )
        .unwrap();
        for v in ["Camp Fire", "Butte County, California", "2018-11-08 to 2018-11-25"] {
            assert!(r.body.contains(v));
        }
        assert_eq!(r.input_manifest.truncation.as_ref().unwrap().truncated, 0);
    }

    #[test]
    fn truncation_boundary() {
        let p = posts(10);
        let req = request(ReportMode::Basic, ReportKind::Topics);
        let prompt = render_prompt(ReportKind::Topics, ReportMode::Basic, &req.params(), None).unwrap();
        let fixed = token_estimate(&prompt) + token_estimate(&format!("\n\n{ATTACHMENT_HEADER}\n"));
        let line_cost: Vec<usize> = p.iter().map(|x| token_estimate(&format!("{}\n", attachment_line(x)))).collect();
        let reserve = 1000;
        // room for exactly six posts
        let cap = fixed + line_cost[..6].iter().sum::<usize>() + reserve;
        let budget = TokenBudget::new(cap, reserve).unwrap();
        let cut = basic_prefix(&prompt, &p, &budget, &HeuristicEstimator).unwrap();
        assert_eq!((cut.included, cut.truncated, cut.first_excluded.as_deref()), (6, 4, Some("p6")));
        let budget = TokenBudget::new(cap - 1, reserve).unwrap();
        assert_eq!(basic_prefix(&prompt, &p, &budget, &HeuristicEstimator).unwrap().included, 5);
    }

    #[test]
    fn oversized_prompt_is_a_budget_error() {
        let p = posts(1);
        let budget = TokenBudget::new(20, 10).unwrap();
        let err = generate_report(
            &request(ReportMode::Basic, ReportKind::Topics),
            ReportInputs::Basic { corpus_id: "c", posts: &p },
            &EchoGateway,
            &budget,
            &HeuristicEstimator,
        )
        .unwrap_err();
        assert!(matches!(err, ReportError::Budget { .. }));
    }

    #[test]
    fn advanced_references_resolve_to_sample() {
        let p = posts(3);
        let refs: Vec<&Post> = p.iter().rev().collect();
        let gw = ScriptedGateway::constant("Police closed roads [1] and evacuated [2].");
        let r = generate_report(
            &request(ReportMode::Advanced, ReportKind::CitySubevents),
            ReportInputs::Advanced { corpus_id: "c", posts: &refs },
            &gw,
            &TokenBudget::default(),
            &HeuristicEstimator,
        )
        .unwrap();
        assert_eq!(r.references.iter().map(|x| x.post_id.as_str()).collect::<Vec<_>>(), vec!["p2", "p1"]);
        assert_eq!(r.input_manifest.post_ids, vec!["p2", "p1", "p0"]);
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let p = posts(1);
        let err = build_request(
            &request(ReportMode::Advanced, ReportKind::Topics),
            ReportInputs::Basic { corpus_id: "c", posts: &p },
            "m",
            &TokenBudget::default(),
            &HeuristicEstimator,
        );
        assert!(err.is_err());
    }
}
