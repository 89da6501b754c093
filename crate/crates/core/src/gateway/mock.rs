//! Deterministic gateways for tests and dry runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatGateway, ChatRequest, Embedder, GatewayError, Role};
use crate::text::content_tokens;

/// Replies with the final user message verbatim.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGateway;

impl ChatGateway for EchoGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.last_user().map(str::to_string).ok_or_else(|| GatewayError::Protocol("no user message".into()))
    }

    fn model(&self) -> &str {
        "echo"
    }
}

type Script = Box<dyn Fn(&ChatRequest, usize) -> Result<String, GatewayError> + Send + Sync>;

/// Answers from a script and records every request it receives.
pub struct ScriptedGateway {
    script: Script,
    calls: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedGateway {
    /// `f(request, call_index)` produces each reply.
    pub fn from_fn(f: impl Fn(&ChatRequest, usize) -> Result<String, GatewayError> + Send + Sync + 'static) -> Self {
        ScriptedGateway { script: Box::new(f), calls: AtomicUsize::new(0), log: Mutex::new(Vec::new()) }
    }

    /// Replies in order; errors once the list is exhausted.
    pub fn responses<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let replies: Vec<String> = replies.into_iter().map(Into::into).collect();
        Self::from_fn(move |_, i| {
            replies.get(i).cloned().ok_or_else(|| GatewayError::Protocol("script exhausted".into()))
        })
    }

    /// The same reply to every call.
    pub fn constant(reply: impl Into<String>) -> Self {
        let reply = reply.into();
        Self::from_fn(move |_, _| Ok(reply.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }
}

impl ChatGateway for ScriptedGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let idx = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("request log poisoned").push(request.clone());
        (self.script)(request, idx)
    }

    fn model(&self) -> &str {
        "scripted"
    }
}

/// Stand-in report writer. Reports are stitched together from the
/// numbered (or attached) source posts, each followed by its `[n]` marker,
/// until the requested word limit is reached. Chat questions are answered
/// with the grounding sentence sharing the most content words.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveGateway;

pub(crate) const CHAT_INSTRUCTION_MARKER: &str = "Answer only from the material";

impl ExtractiveGateway {
    fn sources(request: &ChatRequest) -> Vec<(usize, String)> {
        let mut numbered = Vec::new();
        let mut attached = Vec::new();
        for msg in request.messages.iter().filter(|m| m.role != Role::Assistant) {
            for line in msg.content.lines() {
                if let Some((n, text)) = parse_numbered(line) {
                    numbered.push((n, text.to_string()));
                } else if let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(line) {
                    if let Some(text) = obj.get("text").and_then(|t| t.as_str()) {
                        attached.push(text.to_string());
                    }
                }
            }
        }
        if numbered.is_empty() {
            attached.into_iter().enumerate().map(|(i, t)| (i + 1, t)).collect()
        } else {
            numbered
        }
    }

    fn word_limit(prompt: &str) -> usize {
        prompt
            .find("constrained to (")
            .map(|i| &prompt[i + "constrained to (".len()..])
            .and_then(|rest| rest.split(')').next())
            .and_then(|n| n.trim().parse().ok())
            .unwrap_or(200)
    }

    fn answer(request: &ChatRequest) -> String {
        let question: Vec<String> = content_tokens(request.last_user().unwrap_or_default());
        let mut best: Option<(usize, String)> = None;
        for msg in request.messages.iter().filter(|m| m.role == Role::System) {
            for sentence in msg.content.split(['\n', '.']).map(str::trim).filter(|s| !s.is_empty()) {
                let sentence = parse_numbered(sentence).map_or(sentence, |(_, t)| t);
                let words = content_tokens(sentence);
                let overlap = question.iter().filter(|q| words.contains(q)).count();
                if overlap > 0 && best.as_ref().is_none_or(|(b, _)| overlap > *b) {
                    best = Some((overlap, sentence.to_string()));
                }
            }
        }
        match best {
            Some((_, sentence)) => format!("According to the provided material: {sentence}."),
            None => "The provided material does not contain that information.".to_string(),
        }
    }
}

fn parse_numbered(line: &str) -> Option<(usize, &str)> {
    let (num, rest) = line.split_once(". ")?;
    let n = num.trim().parse().ok()?;
    Some((n, rest.trim()))
}

impl ChatGateway for ExtractiveGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let is_chat = request
            .messages
            .iter()
            .any(|m| m.role == Role::System && m.content.contains(CHAT_INSTRUCTION_MARKER));
        if is_chat {
            return Ok(Self::answer(request));
        }
        let prompt = request.messages.iter().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str());
        let limit = Self::word_limit(prompt);
        let mut body = Vec::new();
        let mut words = 0;
        for (n, text) in Self::sources(request) {
            if words >= limit {
                break;
            }
            let sentence = text.trim().trim_end_matches('.').to_string();
            words += sentence.split_whitespace().count();
            body.push(format!("{sentence} [{n}]."));
        }
        if body.is_empty() {
            return Ok("No source posts were provided.".to_string());
        }
        Ok(body.join(" "))
    }

    fn model(&self) -> &str {
        "extractive-mock"
    }
}

/// Returns fixed vectors for known texts.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbedder {
    vectors: HashMap<String, Vec<f32>>,
}

impl ScriptedEmbedder {
    pub fn new(pairs: impl IntoIterator<Item = (String, Vec<f32>)>) -> Self {
        ScriptedEmbedder { vectors: pairs.into_iter().collect() }
    }
}

impl Embedder for ScriptedEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        texts
            .iter()
            .map(|t| self.vectors.get(t).cloned().ok_or_else(|| GatewayError::Protocol(format!("no vector for `{t}`"))))
            .collect()
    }
}
