use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crisis_core::corpus::{FieldMap, RecordFormat};
use crisis_core::gateway::{HttpEndpoint, RetryPolicy};
use crisis_core::reportgen::{ReportKind, DEFAULT_CONTEXT_CAP, DEFAULT_OUTPUT_RESERVE};
use crisis_core::sample::{DimensionSelection, SampleFilters};
use crisis_core::topics::TopicConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store_root: Option<PathBuf>,
    pub input: Option<InputConfig>,
    pub event: EventConfig,
    pub enrich: EnrichConfig,
    pub topics: TopicsConfig,
    pub sampling: SamplingConfig,
    pub report: ReportConfig,
    pub budget: BudgetConfig,
    pub gateway: GatewayConfig,
    pub eval: EvalConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: RecordFormat,
    #[serde(default)]
    pub field_map: Option<FieldMap>,
    #[serde(default)]
    pub corpus_id: Option<String>,
}

fn default_format() -> RecordFormat {
    RecordFormat::Jsonl
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    pub name: String,
    pub area: String,
    pub date_range: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Lexicon,
    GroundTruth,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichConfig {
    pub dimensions: Vec<String>,
    pub backends: BTreeMap<String, BackendConfig>,
    pub gazetteer: Option<PathBuf>,
    pub area_hint: Option<String>,
    pub batch_size: usize,
    pub workers: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        EnrichConfig {
            dimensions: vec!["sentiment".into(), "content_type".into(), "sub_event".into()],
            backends: BTreeMap::new(),
            gazetteer: None,
            area_hint: None,
            batch_size: 32,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub k_grid: Vec<usize>,
    pub seed: u64,
    #[serde(flatten)]
    pub model: TopicConfig,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig { k_grid: crisis_core::topics::default_k_grid(), seed: 42, model: TopicConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingDimension {
    pub dimension: String,
    /// Empty selects every class of the dimension.
    #[serde(default)]
    pub classes: Vec<String>,
}

impl From<&SamplingDimension> for DimensionSelection {
    fn from(d: &SamplingDimension) -> Self {
        DimensionSelection { dimension: d.dimension.clone(), classes: d.classes.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub target_size: usize,
    pub dimensions: Vec<SamplingDimension>,
    pub filters: SampleFilters,
    pub uncapped: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            target_size: 100,
            dimensions: vec![SamplingDimension { dimension: "topic".into(), classes: Vec::new() }],
            filters: SampleFilters::default(),
            uncapped: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub kind: ReportKind,
    pub word_limit: u32,
    pub city: Option<String>,
    pub stakeholders: Vec<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            kind: ReportKind::Topics,
            word_limit: crisis_core::reportgen::DEFAULT_WORD_LIMIT,
            city: None,
            stakeholders: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub context_cap: usize,
    pub output_reserve: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig { context_cap: DEFAULT_CONTEXT_CAP, output_reserve: DEFAULT_OUTPUT_RESERVE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
    #[serde(default)]
    pub retry: Option<RetryPolicy>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl EndpointConfig {
    pub fn endpoint(&self) -> HttpEndpoint {
        let mut ep = HttpEndpoint::new(self.url.clone());
        ep.api_key = self.api_key.clone().filter(|k| !k.is_empty());
        if let Some(t) = self.timeout_secs {
            ep.timeout_secs = t;
        }
        if let Some(r) = self.retry {
            ep.retry = r;
        }
        ep
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub chat: Option<EndpointConfig>,
    pub embedding: Option<EndpointConfig>,
    /// Judge endpoint; defaults to the chat endpoint.
    pub judge: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub repetitions: usize,
    pub concurrency: usize,
    pub quality: bool,
    /// Coverage reference items; derived from the topic terms when empty.
    pub items: Vec<String>,
    pub terms_per_item: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { repetitions: 10, concurrency: 4, quality: false, items: Vec::new(), terms_per_item: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub max_jobs: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1:8080".into(), max_jobs: 4 }
    }
}

/// Replaces `${NAME}` with the value of environment variable `NAME`, and
/// `${NAME:-fallback}` with the fallback when `NAME` is unset.
pub fn expand_env(raw: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ServiceError> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| ServiceError::Config("unterminated `${` in config".into()))?;
        let (name, fallback) = match after[..end].split_once(":-") {
            Some((n, f)) => (n, Some(f)),
            None => (&after[..end], None),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ServiceError::Config(format!("invalid variable name `{name}`")));
        }
        let value = lookup(name)
            .or_else(|| fallback.map(String::from))
            .ok_or_else(|| ServiceError::Config(format!("environment variable `{name}` is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl Config {
    pub fn parse(raw: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        let expanded = expand_env(raw, lookup)?;
        let config: Config = toml::from_str(&expanded).map_err(|e| ServiceError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut config = Config::parse(&raw, |name| std::env::var(name).ok())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(root) = config.store_root.as_mut() {
            resolve(root);
        }
        if let Some(input) = config.input.as_mut() {
            resolve(&mut input.path);
        }
        if let Some(gaz) = config.enrich.gazetteer.as_mut() {
            resolve(gaz);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        for (dim, backend) in &self.enrich.backends {
            if backend.kind == BackendKind::Remote && backend.url.is_none() {
                return Err(ServiceError::Config(format!("remote backend for `{dim}` needs a url")));
            }
        }
        if self.server.max_jobs == 0 {
            return Err(ServiceError::Config("server.max_jobs must be positive".into()));
        }
        if self.budget.output_reserve >= self.budget.context_cap {
            return Err(ServiceError::Config("budget.output_reserve must be below budget.context_cap".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(name: &str) -> Option<String> {
        (name == "API_KEY").then(|| "secret".to_string())
    }

    #[test]
    fn expands_variables() {
        assert_eq!(expand_env("key = \"${API_KEY}\"", env).unwrap(), "key = \"secret\"");
        assert!(matches!(expand_env("${MISSING}", env), Err(ServiceError::Config(_))));
        assert!(expand_env("${API_KEY", env).is_err());
        assert_eq!(expand_env("no vars $HOME", env).unwrap(), "no vars $HOME");
        assert_eq!(expand_env("${MISSING:-x}/${API_KEY:-y}/${MISSING:-}", env).unwrap(), "x/secret/");
    }

    #[test]
    fn parses_full_config() {
        let raw = r#"
            [event]
            name = "Camp Fire"
            area = "California"
            date_range = "November 2018"

            [enrich]
            dimensions = ["sentiment", "emotion"]
            [enrich.backends.emotion]
            kind = "remote"
            url = "http://localhost:9000/classify"
            api_key = "${API_KEY}"

            [topics]
            k_grid = [2, 3, 4]
            seed = 7
            window = 5

            [sampling]
            target_size = 50
            dimensions = [{ dimension = "sentiment", classes = ["negative"] }]

            [gateway.chat]
            url = "http://localhost:8000/v1/chat/completions"
            model = "gpt-4o"
        "#;
        let c = Config::parse(raw, env).unwrap();
        assert_eq!(c.enrich.backends["emotion"].api_key.as_deref(), Some("secret"));
        assert_eq!(c.topics.model.window, 5);
        assert_eq!(c.sampling.target_size, 50);
        assert_eq!(c.report.kind, ReportKind::Topics);
        assert_eq!(c.server.max_jobs, 4);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_backends() {
        assert!(Config::parse("bogus = 1", env).is_err());
        assert!(Config::parse("[enrich.backends.x]\nkind = \"remote\"", env).is_err());
    }
}
