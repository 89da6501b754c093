use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use crisis_core::classify::{
    enrich_corpus, BackendRegistry, ClassDistribution, ClassifierBackend, EnrichedPost, Gazetteer,
    GroundTruthBackend, LexiconBackend, LocationContext, RemoteBackend,
};
use crisis_core::corpus::{ingest_posts, relabel_subevents, DisasterTaxonomy, FieldMap, RecordFormat, DISASTER_EVENT, SUB_EVENT};
use crisis_core::evalsuite::{compare_modes, CompareOptions, ComparisonTable, ContainmentJudge};
use crisis_core::gateway::{ChatGateway, Embedder, ExtractiveGateway, HashingEmbedder, HttpChatGateway, HttpEmbedder};
use crisis_core::reportgen::{
    chat_turn, generate_report, ChatReply, ChatSession, Grounding, HeuristicEstimator, Report, ReportInputs, ReportKind,
    ReportMode, ReportRequest, TokenBudget,
};
use crisis_core::sample::{build_sample, DimensionSelection, Sample, SampleFilters, SamplingSpec};
use crisis_core::topics::{embed_documents, export_topic_clusters, select_topic_count, CoherenceCurve, TopicExport, TopicModel, TOPIC_DIMENSION};
use crisis_core::{Corpus, DateRange, Post};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, Config};
use crate::store::content_id;
use crate::ServiceError;

/// Dimensions produced by other stages rather than by a classifier.
const DERIVED_DIMENSIONS: [&str; 2] = ["location", TOPIC_DIMENSION];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub corpus: Corpus,
    pub dropped: usize,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRecord {
    pub id: String,
    pub corpus_id: String,
    pub dimensions: Vec<String>,
    pub posts: Vec<EnrichedPost>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRecord {
    pub id: String,
    pub corpus_id: String,
    pub curve: CoherenceCurve,
    pub export: TopicExport,
    /// Post id to topic distribution.
    pub distributions: BTreeMap<String, ClassDistribution>,
    pub created_at: DateTime<Utc>,
}

impl TopicRecord {
    /// One coverage item per topic: its leading terms.
    pub fn items(&self, terms_per_item: usize) -> Vec<String> {
        self.export
            .topics
            .iter()
            .map(|t| t.terms.iter().take(terms_per_item.max(1)).map(|w| w.term.as_str()).collect::<Vec<_>>().join(" "))
            .filter(|s| !s.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub corpus_id: String,
    pub enrichment_id: String,
    #[serde(default)]
    pub topics_id: Option<String>,
    pub sample: Sample,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub basic_report_id: String,
    pub advanced_report_id: String,
    pub table: ComparisonTable,
    pub created_at: DateTime<Utc>,
}

/// Id derived from the canonical JSON of `value`.
pub fn record_id<T: Serialize>(value: &T) -> String {
    content_id(&serde_json::to_vec(value).expect("records serialize"))
}

/// The configured stages with their gateways and backends.
pub struct Pipeline {
    pub config: Config,
    registry: BackendRegistry,
    chat: Arc<dyn ChatGateway>,
    judge: Arc<dyn ChatGateway>,
    embedder: Arc<dyn Embedder>,
    budget: TokenBudget,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("chat", &self.chat.model()).field("judge", &self.judge.model()).finish()
    }
}

impl Pipeline {
    /// Builds gateways from the config. `dry_run` swaps every external
    /// endpoint for a deterministic local stand-in.
    pub fn new(config: Config, dry_run: bool) -> Result<Self, ServiceError> {
        let (chat, judge, embedder): (Arc<dyn ChatGateway>, Arc<dyn ChatGateway>, Arc<dyn Embedder>) = if dry_run {
            (Arc::new(ExtractiveGateway), Arc::new(ContainmentJudge), Arc::new(HashingEmbedder::default()))
        } else {
            let chat_cfg =
                config.gateway.chat.as_ref().ok_or_else(|| ServiceError::Config("gateway.chat is not configured".into()))?;
            let chat: Arc<dyn ChatGateway> = Arc::new(HttpChatGateway::new(
                chat_cfg.endpoint(),
                chat_cfg.model.clone().unwrap_or_else(|| "default".into()),
            ));
            let judge: Arc<dyn ChatGateway> = match &config.gateway.judge {
                Some(j) => Arc::new(HttpChatGateway::new(j.endpoint(), j.model.clone().unwrap_or_else(|| "default".into()))),
                None => Arc::clone(&chat),
            };
            let embedder: Arc<dyn Embedder> = match &config.gateway.embedding {
                Some(e) => Arc::new(HttpEmbedder::new(e.endpoint()).with_batch_size(e.batch_size.unwrap_or(64))),
                None => Arc::new(HashingEmbedder::default()),
            };
            (chat, judge, embedder)
        };
        Pipeline::with_gateways(config, dry_run, chat, judge, embedder)
    }

    pub fn with_gateways(
        config: Config,
        dry_run: bool,
        chat: Arc<dyn ChatGateway>,
        judge: Arc<dyn ChatGateway>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, ServiceError> {
        config.validate()?;
        let registry = build_registry(&config, dry_run)?;
        let budget = TokenBudget::new(config.budget.context_cap, config.budget.output_reserve)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(Pipeline { config, registry, chat, judge, embedder, budget })
    }

    pub fn budget(&self) -> &TokenBudget {
        &self.budget
    }

    pub fn chat_model(&self) -> &str {
        self.chat.model()
    }

    /// Parses uploaded records. Without an explicit id the corpus id is the
    /// content hash of the parsed posts.
    pub fn ingest(
        &self,
        bytes: &[u8],
        format: RecordFormat,
        field_map: &FieldMap,
        corpus_id: Option<String>,
    ) -> Result<CorpusRecord, ServiceError> {
        let ingested = ingest_posts(bytes, format, field_map).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let posts = ingested.corpus.posts().to_vec();
        let id = corpus_id.unwrap_or_else(|| record_id(&posts));
        let event = &self.config.event;
        let corpus = Corpus::new(id, &event.name, &event.area, DateRange::spanning(&posts).unwrap_or_default(), posts)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(CorpusRecord { corpus, dropped: ingested.dropped, created_at: Utc::now() })
    }

    /// Classifies every post along `dimensions`, deriving the sub-event
    /// label from disaster-event labels when needed.
    pub fn enrich(&self, corpus: &Corpus, dimensions: &[String]) -> Result<EnrichmentRecord, ServiceError> {
        let mut dims: Vec<String> = Vec::new();
        for d in dimensions {
            if !DERIVED_DIMENSIONS.contains(&d.as_str()) && !dims.contains(d) {
                dims.push(d.clone());
            }
        }
        let needs_relabel = dims.iter().any(|d| d == SUB_EVENT)
            && self.registry.backend(SUB_EVENT).is_some_and(|b| b.name() == "ground-truth")
            && corpus.posts().iter().any(|p| p.label(SUB_EVENT).is_none());
        let relabeled;
        let source = if needs_relabel {
            relabeled = relabel_subevents(corpus, &DisasterTaxonomy::humaid())
                .map_err(|e| ServiceError::Unprocessable(format!("sub_event needs {DISASTER_EVENT} labels: {e}")))?;
            &relabeled
        } else {
            corpus
        };
        let posts = enrich_corpus(source, &dims, &self.registry).map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        let id = record_id(&(&corpus.corpus_id, &dims));
        Ok(EnrichmentRecord { id, corpus_id: corpus.corpus_id.clone(), dimensions: dims, posts, created_at: Utc::now() })
    }

    /// Embeds the posts and picks the topic count with the best coherence.
    pub fn topics(&self, corpus: &Corpus, k_grid: Option<&[usize]>) -> Result<(TopicRecord, TopicModel), ServiceError> {
        let mut posts: Vec<EnrichedPost> = corpus.posts().iter().cloned().map(EnrichedPost::new).collect();
        let grid: Vec<usize> =
            k_grid.unwrap_or(&self.config.topics.k_grid).iter().copied().filter(|&k| k <= posts.len()).collect();
        if grid.is_empty() {
            return Err(ServiceError::Unprocessable(format!("no k in the grid fits {} posts", posts.len())));
        }
        let embeddings = embed_documents(&posts, self.embedder.as_ref()).map_err(|e| ServiceError::Pipeline(e.to_string()))?;
        let (curve, model) = select_topic_count(&posts, &embeddings, &grid, self.config.topics.seed, &self.config.topics.model)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        model.annotate(&mut posts, &embeddings).map_err(|e| ServiceError::Pipeline(e.to_string()))?;
        let distributions = posts
            .into_iter()
            .filter_map(|p| p.distributions.get(TOPIC_DIMENSION).cloned().map(|d| (p.post.id, d)))
            .collect();
        let id = record_id(&(&corpus.corpus_id, &grid, self.config.topics.seed, self.embedder_tag()));
        let record = TopicRecord {
            id,
            corpus_id: corpus.corpus_id.clone(),
            curve,
            export: export_topic_clusters(&model),
            distributions,
            created_at: Utc::now(),
        };
        Ok((record, model))
    }

    fn embedder_tag(&self) -> &'static str {
        std::any::type_name_of_val(self.embedder.as_ref())
    }

    /// The configured sampling spec, with report-specific filters.
    pub fn sampling_spec(&self, target_size: Option<usize>, kind: ReportKind, city: Option<&str>) -> SamplingSpec {
        let cfg = &self.config.sampling;
        let mut spec = SamplingSpec::new(
            cfg.dimensions.iter().map(DimensionSelection::from).collect(),
            target_size.unwrap_or(cfg.target_size),
        );
        spec.uncapped = cfg.uncapped;
        spec.filters = cfg.filters.clone();
        if kind == ReportKind::CitySubevents {
            spec.filters = SampleFilters { city: city.map(String::from).or(spec.filters.city), subevent_only: true };
        }
        spec
    }

    /// Builds the representative sample from enriched posts, merging in
    /// topic distributions when given. Empty class lists select every class.
    pub fn sample(
        &self,
        enrichment: &EnrichmentRecord,
        topics: Option<&TopicRecord>,
        spec: &SamplingSpec,
    ) -> Result<SampleRecord, ServiceError> {
        let mut posts = enrichment.posts.clone();
        if let Some(t) = topics {
            for p in &mut posts {
                if let Some(d) = t.distributions.get(p.id()) {
                    p.distributions.insert(TOPIC_DIMENSION.to_string(), d.clone());
                }
            }
        }
        let mut spec = spec.clone();
        for sel in &mut spec.dimensions {
            if sel.classes.is_empty() {
                sel.classes = posts
                    .iter()
                    .find_map(|p| p.distribution(&sel.dimension))
                    .map(|d| d.probs.keys().cloned().collect())
                    .ok_or_else(|| ServiceError::Unprocessable(format!("no post carries a `{}` distribution", sel.dimension)))?;
            }
        }
        let sample = build_sample(&posts, &spec).map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        let id = record_id(&(&enrichment.id, topics.map(|t| &t.id), &spec));
        Ok(SampleRecord {
            id,
            corpus_id: enrichment.corpus_id.clone(),
            enrichment_id: enrichment.id.clone(),
            topics_id: topics.map(|t| t.id.clone()),
            sample,
            created_at: Utc::now(),
        })
    }

    /// Generates one report. Advanced mode needs the sample.
    pub fn report(&self, corpus: &Corpus, request: &ReportRequest, sample: Option<&SampleRecord>) -> Result<Report, ServiceError> {
        let inputs_posts: Vec<&Post>;
        let inputs = match request.mode {
            ReportMode::Basic => ReportInputs::Basic { corpus_id: &corpus.corpus_id, posts: corpus.posts() },
            ReportMode::Advanced => {
                let sample = sample.ok_or_else(|| ServiceError::Unprocessable("advanced mode needs a sample".into()))?;
                inputs_posts = sample.sample.members.iter().filter_map(|id| corpus.get(id)).collect();
                ReportInputs::Advanced { corpus_id: &corpus.corpus_id, posts: &inputs_posts }
            }
        };
        generate_report(request, inputs, self.chat.as_ref(), &self.budget, &HeuristicEstimator).map_err(ServiceError::from)
    }

    /// A report request filled from the config's event and report settings.
    pub fn report_request(&self, mode: ReportMode) -> ReportRequest {
        let ev = &self.config.event;
        let mut req = ReportRequest::new(mode, self.config.report.kind, &ev.name, &ev.area, &ev.date_range);
        req.word_limit = self.config.report.word_limit;
        req.city.clone_from(&self.config.report.city);
        req.stakeholders.clone_from(&self.config.report.stakeholders);
        req
    }

    pub fn compare(
        &self,
        basic: &Report,
        advanced: &Report,
        corpus: &Corpus,
        items: &[String],
    ) -> Result<ComparisonTable, ServiceError> {
        let opts = CompareOptions {
            repetitions: self.config.eval.repetitions,
            concurrency: self.config.eval.concurrency,
            quality: self.config.eval.quality,
        };
        compare_modes(basic, advanced, corpus, items, self.judge.as_ref(), Some(self.embedder.as_ref()), &opts)
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))
    }

    pub fn open_chat(&self, report: &Report, corpus: &Corpus) -> ChatSession {
        let posts = report
            .input_manifest
            .post_ids
            .iter()
            .filter_map(|id| corpus.get(id))
            .map(|p| (p.id.clone(), p.text.clone()));
        let grounding = Grounding::new(report.body.clone(), posts);
        let id = content_id(format!("{}\n{}", report.id, uuid_like()).as_bytes());
        ChatSession::new(id, report.id.clone(), grounding)
    }

    pub fn chat(&self, session: &mut ChatSession, question: &str) -> Result<ChatReply, ServiceError> {
        chat_turn(session, question, self.chat.as_ref(), &self.budget, &HeuristicEstimator).map_err(ServiceError::from)
    }
}

/// Process-unique nonce for session ids.
fn uuid_like() -> String {
    use std::sync::atomic::{AtomicU64, Ordering};
    static N: AtomicU64 = AtomicU64::new(0);
    format!("{}-{}-{}", std::process::id(), Utc::now().timestamp_nanos_opt().unwrap_or_default(), N.fetch_add(1, Ordering::Relaxed))
}

fn default_backend(dimension: &str) -> Arc<dyn ClassifierBackend> {
    match LexiconBackend::builtin(dimension) {
        Some(b) => Arc::new(b),
        None => Arc::new(GroundTruthBackend),
    }
}

fn build_registry(config: &Config, dry_run: bool) -> Result<BackendRegistry, ServiceError> {
    let mut registry = BackendRegistry::new();
    registry.batch_size = config.enrich.batch_size.max(1);
    registry.workers = config.enrich.workers.max(1);
    for dim in &config.enrich.dimensions {
        if DERIVED_DIMENSIONS.contains(&dim.as_str()) {
            continue;
        }
        if registry.schema(dim).is_none() {
            return Err(ServiceError::Config(format!("unknown dimension `{dim}`")));
        }
        let backend: Arc<dyn ClassifierBackend> = match config.enrich.backends.get(dim) {
            None => default_backend(dim),
            Some(b) => match b.kind {
                BackendKind::Lexicon => Arc::new(
                    LexiconBackend::builtin(dim)
                        .ok_or_else(|| ServiceError::Config(format!("no built-in lexicon for `{dim}`")))?,
                ),
                BackendKind::GroundTruth => Arc::new(GroundTruthBackend),
                BackendKind::Remote if dry_run => default_backend(dim),
                BackendKind::Remote => {
                    let mut ep = crisis_core::gateway::HttpEndpoint::new(b.url.clone().expect("validated"));
                    ep.api_key = b.api_key.clone().filter(|k| !k.is_empty());
                    if let Some(t) = b.timeout_secs {
                        ep.timeout_secs = t;
                    }
                    Arc::new(RemoteBackend::new(ep))
                }
            },
        };
        registry.register(dim.clone(), backend);
    }
    if let Some(path) = &config.enrich.gazetteer {
        let file = std::fs::File::open(path)
            .map_err(|e| ServiceError::Config(format!("cannot open gazetteer `{}`: {e}", path.display())))?;
        let gaz = Gazetteer::from_jsonl(std::io::BufReader::new(file)).map_err(|e| ServiceError::Config(e.to_string()))?;
        let ctx = LocationContext { area_hint: config.enrich.area_hint.clone() };
        registry.set_gazetteer(Arc::new(gaz), ctx);
    }
    Ok(registry)
}
