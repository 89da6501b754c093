use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ChatGateway, ChatRequest, Embedder, GatewayError, RetryPolicy};

/// One JSON-over-HTTP POST endpoint with timeout and retry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint { url: url.into(), api_key: None, timeout_secs: default_timeout_secs(), retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// POSTs `body` and decodes the JSON reply, retrying transient failures.
    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, GatewayError> {
        let payload = serde_json::to_vec(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        let bytes = self.retry.run(|| self.send(&payload))?;
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Protocol(format!("unexpected response body: {e}")))
    }

    fn send(&self, payload: &[u8]) -> Result<Vec<u8>, GatewayError> {
        // A fresh blocking client per call: it must not outlive the calling
        // thread when that thread belongs to an async runtime's blocking pool.
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let mut req = client.post(&self.url).header("content-type", "application/json").body(payload.to_vec());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).chars().take(500).collect(),
            });
        }
        Ok(body.to_vec())
    }
}

/// Chat-completions client: `{model, messages, max_tokens, temperature}` in,
/// `{choices:[{message:{content}}]}` out.
#[derive(Debug, Clone)]
pub struct HttpChatGateway {
    endpoint: HttpEndpoint,
    model: String,
}

impl HttpChatGateway {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        HttpChatGateway { endpoint, model: model.into() }
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl ChatGateway for HttpChatGateway {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut request = request.clone();
        request.model.clone_from(&self.model);
        let resp: CompletionResponse = self.endpoint.post_json(&request)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::Protocol("response has no choices[0].message.content".into()))
    }

    fn model(&self) -> &str {
        &self.model
    }
}

/// Embedding client: `{texts}` in, `{embeddings}` out, same order.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpEmbedder { endpoint, batch_size: 64 }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self.endpoint.post_json(&EmbedRequest { texts: batch })?;
            if resp.embeddings.len() != batch.len() {
                return Err(GatewayError::Protocol(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    resp.embeddings.len()
                )));
            }
            out.extend(resp.embeddings);
        }
        if let Some(first) = out.first() {
            let dim = first.len();
            if let Some(bad) = out.iter().position(|row| row.len() != dim) {
                return Err(GatewayError::Protocol(format!(
                    "embedding {bad} has dimension {}, expected {dim}",
                    out[bad].len()
                )));
            }
        }
        Ok(out)
    }
}
