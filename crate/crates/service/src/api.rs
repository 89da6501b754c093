use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crisis_core::classify::EnrichedPost;
use crisis_core::corpus::{FieldMap, RecordFormat};
use crisis_core::reportgen::{ChatSession, Report, ReportMode, ReportRequest};
use crisis_core::sample::{DimensionSelection, SampleFilters, SamplingSpec};
use crisis_core::topics::TOPIC_DIMENSION;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::jobs::{JobKind, JobRecord, JobRunner};
use crate::pipeline::{record_id, CorpusRecord, EnrichmentRecord, EvalRecord, Pipeline, SampleRecord, TopicRecord};
use crate::store::{valid_id, Kind, Store};
use crate::ServiceError;

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Store,
    pub jobs: Arc<JobRunner>,
    chat_locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, store: Store) -> Result<Self, ServiceError> {
        let jobs = JobRunner::new(store.clone(), pipeline.config.server.max_jobs)?;
        Ok(AppState { pipeline: Arc::new(pipeline), store, jobs: Arc::new(jobs), chat_locks: Arc::default() })
    }

    fn chat_lock(&self, chat_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        Arc::clone(self.chat_locks.lock().expect("chat locks poisoned").entry(chat_id.to_string()).or_default())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Upstream(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Config(_) | ServiceError::Pipeline(_) | ServiceError::Io(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

/// Like [`body`], but an absent body means the default request.
fn optional_body<T: Default>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::MissingJsonContentType(_)) => Ok(T::default()),
        Err(e) => Err(ServiceError::BadRequest(e.body_text())),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/corpora/{id}/enrich", post(submit_enrich))
        .route("/corpora/{id}/topics", post(submit_topics))
        .route("/corpora/{id}/samples", post(submit_sample))
        .route("/corpora/{id}/reports", get(list_reports))
        .route("/jobs/{id}", get(get_job))
        .route("/enrichments/{id}", get(get_enrichment))
        .route("/topics/{id}", get(get_topics))
        .route("/samples/{id}", get(get_sample))
        .route("/reports", post(create_report))
        .route("/reports/{id}", get(get_report))
        .route("/evals", post(submit_eval))
        .route("/evals/{id}", get(get_eval))
        .route("/chats", post(create_chat))
        .route("/chats/{id}", get(get_chat))
        .route("/chats/{id}/messages", post(post_message))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub event: String,
    pub posts: usize,
    pub dropped: usize,
    pub enrichments: Vec<String>,
    pub topics: Vec<String>,
    pub samples: Vec<String>,
}

fn load_corpus(store: &Store, id: &str) -> ApiResult<CorpusRecord> {
    store.get(Kind::Corpora, id).map_err(|e| match e {
        ServiceError::NotFound(_) => ServiceError::NotFound(format!("corpus `{id}`")),
        other => other,
    })
}

/// Records of `kind` belonging to `corpus_id`, oldest first.
fn for_corpus<T, F>(store: &Store, kind: Kind, corpus_id: &str, owner: F) -> ApiResult<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> (&str, chrono::DateTime<chrono::Utc>),
{
    let mut out: Vec<T> = store.all::<T>(kind)?.into_iter().filter(|r| owner(r).0 == corpus_id).collect();
    out.sort_by_key(|r| owner(r).1);
    Ok(out)
}

fn latest_enrichment(store: &Store, corpus_id: &str) -> ApiResult<Option<EnrichmentRecord>> {
    Ok(for_corpus(store, Kind::Enrichments, corpus_id, |r: &EnrichmentRecord| (&r.corpus_id, r.created_at))?.pop())
}

fn latest_topics(store: &Store, corpus_id: &str) -> ApiResult<Option<TopicRecord>> {
    Ok(for_corpus(store, Kind::Topics, corpus_id, |r: &TopicRecord| (&r.corpus_id, r.created_at))?.pop())
}

fn summary(store: &Store, record: &CorpusRecord) -> ApiResult<DatasetSummary> {
    let id = &record.corpus.corpus_id;
    let ids = |kind| -> ApiResult<Vec<String>> {
        Ok(match kind {
            Kind::Enrichments => for_corpus(store, kind, id, |r: &EnrichmentRecord| (&r.corpus_id, r.created_at))?
                .into_iter()
                .map(|r| r.id)
                .collect(),
            Kind::Topics => for_corpus(store, kind, id, |r: &TopicRecord| (&r.corpus_id, r.created_at))?
                .into_iter()
                .map(|r| r.id)
                .collect(),
            _ => for_corpus(store, kind, id, |r: &SampleRecord| (&r.corpus_id, r.created_at))?
                .into_iter()
                .map(|r| r.id)
                .collect(),
        })
    };
    Ok(DatasetSummary {
        id: id.clone(),
        event: record.corpus.event_name.clone(),
        posts: record.corpus.len(),
        dropped: record.dropped,
        enrichments: ids(Kind::Enrichments)?,
        topics: ids(Kind::Topics)?,
        samples: ids(Kind::Samples)?,
    })
}

async fn upload_dataset(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut file: Option<(Option<String>, Vec<u8>)> = None;
    let mut format: Option<RecordFormat> = None;
    let mut id: Option<String> = None;
    let mut field_map: Option<FieldMap> = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| ServiceError::BadRequest(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let filename = field.file_name().map(String::from);
        let bytes = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "file" => file = Some((filename, bytes.to_vec())),
            "format" => format = Some(text().parse().map_err(ServiceError::BadRequest)?),
            "id" => id = Some(text()),
            "field_map" => {
                field_map = Some(serde_json::from_slice(&bytes).map_err(|e| ServiceError::BadRequest(format!("field_map: {e}")))?)
            }
            other => return Err(ServiceError::BadRequest(format!("unexpected form field `{other}`"))),
        }
    }
    let (filename, bytes) = file.ok_or_else(|| ServiceError::BadRequest("missing form field `file`".into()))?;
    let format = format
        .or_else(|| filename.as_deref().and_then(|f| f.rsplit_once('.')).and_then(|(_, ext)| ext.parse().ok()))
        .unwrap_or(RecordFormat::Jsonl);
    if let Some(id) = &id {
        if !valid_id(id) {
            return Err(ServiceError::BadRequest(format!("invalid corpus id `{id}`")));
        }
    }
    let pipeline = Arc::clone(&state.pipeline);
    let store = state.store.clone();
    blocking(move || {
        let record = pipeline.ingest(&bytes, format, &field_map.unwrap_or_default(), id)?;
        let cid = record.corpus.corpus_id.clone();
        match store.get::<CorpusRecord>(Kind::Corpora, &cid) {
            Ok(existing) if existing.corpus == record.corpus => {}
            Ok(_) => return Err(ServiceError::Conflict(format!("corpus `{cid}` already exists with different posts"))),
            Err(ServiceError::NotFound(_)) => {
                store.put(Kind::Corpora, &cid, &record)?;
            }
            Err(e) => return Err(e),
        }
        Ok((StatusCode::CREATED, Json(json!({ "id": cid, "posts": record.corpus.len(), "dropped": record.dropped }))))
    })
    .await
}

async fn list_datasets(State(state): State<AppState>) -> ApiResult<Json<Vec<DatasetSummary>>> {
    blocking(move || {
        let records: Vec<CorpusRecord> = state.store.all(Kind::Corpora)?;
        Ok(Json(records.iter().map(|r| summary(&state.store, r)).collect::<ApiResult<_>>()?))
    })
    .await
}

async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DatasetSummary>> {
    blocking(move || Ok(Json(summary(&state.store, &load_corpus(&state.store, &id)?)?))).await
}

fn accepted(job: JobRecord, created: bool) -> (StatusCode, Json<JobRecord>) {
    (if created { StatusCode::ACCEPTED } else { StatusCode::OK }, Json(job))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichBody {
    pub dimensions: Option<Vec<String>>,
}

async fn submit_enrich(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<EnrichBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = optional_body(payload)?;
    let record = load_corpus(&state.store, &id)?;
    let dims = req.dimensions.unwrap_or_else(|| state.pipeline.config.enrich.dimensions.clone());
    let request = json!({ "corpus": id, "dimensions": dims });
    let (pipeline, store) = (Arc::clone(&state.pipeline), state.store.clone());
    let (job, created) = state.jobs.submit(JobKind::Enrich, vec![format!("corpora/{id}")], &request, move || {
        let out = pipeline.enrich(&record.corpus, &dims)?;
        store.put(Kind::Enrichments, &out.id, &out)?;
        Ok(format!("enrichments/{}", out.id))
    })?;
    Ok(accepted(job, created))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsBody {
    pub k_grid: Option<Vec<usize>>,
}

async fn submit_topics(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<TopicsBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = optional_body(payload)?;
    let record = load_corpus(&state.store, &id)?;
    let request = json!({ "corpus": id, "k_grid": req.k_grid });
    let (pipeline, store) = (Arc::clone(&state.pipeline), state.store.clone());
    let (job, created) = state.jobs.submit(JobKind::Topics, vec![format!("corpora/{id}")], &request, move || {
        let (out, _) = pipeline.topics(&record.corpus, req.k_grid.as_deref())?;
        store.put(Kind::Topics, &out.id, &out)?;
        Ok(format!("topics/{}", out.id))
    })?;
    Ok(accepted(job, created))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleBody {
    pub target_size: Option<usize>,
    pub dimensions: Option<Vec<DimensionSelection>>,
    pub filters: Option<SampleFilters>,
    pub uncapped: Option<bool>,
    pub enrichment_id: Option<String>,
    pub topics_id: Option<String>,
}

fn resolve_sample_spec(pipeline: &Pipeline, req: &SampleBody) -> SamplingSpec {
    let mut spec = pipeline.sampling_spec(req.target_size, pipeline.config.report.kind, None);
    if let Some(dims) = &req.dimensions {
        spec.dimensions.clone_from(dims);
    }
    if let Some(f) = &req.filters {
        spec.filters = f.clone();
    }
    if let Some(u) = req.uncapped {
        spec.uncapped = u;
    }
    spec
}

/// Builds and persists a sample from the given or latest enrichment and
/// topic records.
fn run_sample(
    pipeline: &Pipeline,
    store: &Store,
    corpus_id: &str,
    spec: &SamplingSpec,
    enrichment_id: Option<&str>,
    topics_id: Option<&str>,
) -> ApiResult<SampleRecord> {
    let enrichment = match enrichment_id {
        Some(eid) => store.get::<EnrichmentRecord>(Kind::Enrichments, eid)?,
        None => latest_enrichment(store, corpus_id)?
            .ok_or_else(|| ServiceError::Unprocessable(format!("corpus `{corpus_id}` has not been enriched")))?,
    };
    let wants_topics = spec.dimensions.iter().any(|d| d.dimension == TOPIC_DIMENSION);
    let topics = match topics_id {
        Some(tid) => Some(store.get::<TopicRecord>(Kind::Topics, tid)?),
        None if wants_topics => Some(
            latest_topics(store, corpus_id)?
                .ok_or_else(|| ServiceError::Unprocessable(format!("corpus `{corpus_id}` has no topic model")))?,
        ),
        None => None,
    };
    let out = pipeline.sample(&enrichment, topics.as_ref(), spec)?;
    store.put(Kind::Samples, &out.id, &out)?;
    Ok(out)
}

async fn submit_sample(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SampleBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = optional_body(payload)?;
    load_corpus(&state.store, &id)?;
    let spec = resolve_sample_spec(&state.pipeline, &req);
    let request = json!({ "corpus": id, "spec": spec, "enrichment_id": req.enrichment_id, "topics_id": req.topics_id });
    let (pipeline, store) = (Arc::clone(&state.pipeline), state.store.clone());
    let (job, created) = state.jobs.submit(JobKind::Sample, vec![format!("corpora/{id}")], &request, move || {
        let out = run_sample(&pipeline, &store, &id, &spec, req.enrichment_id.as_deref(), req.topics_id.as_deref())?;
        Ok(format!("samples/{}", out.id))
    })?;
    Ok(accepted(job, created))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    Ok(Json(state.jobs.get(&id)?))
}

async fn get_record<T: serde::de::DeserializeOwned + Serialize + Send + 'static>(
    state: AppState,
    kind: Kind,
    id: String,
) -> ApiResult<Json<T>> {
    blocking(move || state.store.get::<T>(kind, &id).map(Json)).await
}

async fn get_enrichment(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EnrichmentRecord>> {
    get_record(state, Kind::Enrichments, id).await
}

async fn get_topics(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<TopicRecord>> {
    get_record(state, Kind::Topics, id).await
}

async fn get_sample(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SampleRecord>> {
    get_record(state, Kind::Samples, id).await
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Report>> {
    get_record(state, Kind::Reports, id).await
}

async fn get_eval(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EvalRecord>> {
    get_record(state, Kind::Evals, id).await
}

async fn get_chat(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ChatSession>> {
    get_record(state, Kind::Chats, id).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportSummary {
    pub id: String,
    pub mode: ReportMode,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

async fn list_reports(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<ReportSummary>>> {
    blocking(move || {
        load_corpus(&state.store, &id)?;
        let reports = for_corpus(&state.store, Kind::Reports, &id, |r: &Report| (&r.input_manifest.corpus_id, r.created_at))?;
        Ok(Json(
            reports
                .into_iter()
                .map(|r| ReportSummary { id: r.id, mode: r.input_manifest.mode, created_at: r.created_at })
                .collect(),
        ))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBody {
    pub corpus_id: String,
    pub request: ReportRequest,
    /// Sample to report on in advanced mode; built from the configured
    /// spec when absent.
    #[serde(default)]
    pub sample_id: Option<String>,
}

async fn create_report(
    State(state): State<AppState>,
    payload: Result<Json<ReportBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Report>)> {
    let req = body(payload)?;
    req.request.validate()?;
    blocking(move || {
        let record = load_corpus(&state.store, &req.corpus_id)?;
        let sample = match (req.request.mode, &req.sample_id) {
            (ReportMode::Basic, _) => None,
            (ReportMode::Advanced, Some(sid)) => {
                let s: SampleRecord = state.store.get(Kind::Samples, sid)?;
                if s.corpus_id != req.corpus_id {
                    return Err(ServiceError::BadRequest(format!("sample `{sid}` belongs to another corpus")));
                }
                Some(s)
            }
            (ReportMode::Advanced, None) => {
                let spec = state.pipeline.sampling_spec(None, req.request.report_kind, req.request.city.as_deref());
                Some(run_sample(&state.pipeline, &state.store, &req.corpus_id, &spec, None, None)?)
            }
        };
        let report = state.pipeline.report(&record.corpus, &req.request, sample.as_ref())?;
        state.store.put(Kind::Reports, &report.id, &report)?;
        Ok((StatusCode::CREATED, Json(report)))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalBody {
    pub basic_report_id: String,
    pub advanced_report_id: String,
    #[serde(default)]
    pub items: Option<Vec<String>>,
}

async fn submit_eval(
    State(state): State<AppState>,
    payload: Result<Json<EvalBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = body(payload)?;
    let store = state.store.clone();
    let (basic, advanced): (Report, Report) =
        blocking(move || Ok((store.get(Kind::Reports, &req.basic_report_id)?, store.get(Kind::Reports, &req.advanced_report_id)?)))
            .await?;
    let corpus_id = basic.input_manifest.corpus_id.clone();
    let request = json!({ "basic": basic.id, "advanced": advanced.id, "items": req.items });
    let inputs = vec![format!("reports/{}", basic.id), format!("reports/{}", advanced.id)];
    let (pipeline, store) = (Arc::clone(&state.pipeline), state.store.clone());
    let (job, created) = state.jobs.submit(JobKind::Eval, inputs, &request, move || {
        let record = load_corpus(&store, &corpus_id)?;
        let items = match req.items {
            Some(items) => items,
            None if !pipeline.config.eval.items.is_empty() => pipeline.config.eval.items.clone(),
            None => latest_topics(&store, &corpus_id)?
                .map(|t| t.items(pipeline.config.eval.terms_per_item))
                .unwrap_or_default(),
        };
        let table = pipeline.compare(&basic, &advanced, &record.corpus, &items)?;
        let id = record_id(&(&basic.id, &advanced.id, &items));
        let eval = EvalRecord {
            id: id.clone(),
            basic_report_id: basic.id,
            advanced_report_id: advanced.id,
            table,
            created_at: chrono::Utc::now(),
        };
        store.put(Kind::Evals, &id, &eval)?;
        Ok(format!("evals/{id}"))
    })?;
    Ok(accepted(job, created))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatBody {
    pub report_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChatState {
    pub id: String,
    pub report_id: String,
    pub turns: usize,
}

async fn create_chat(
    State(state): State<AppState>,
    payload: Result<Json<ChatBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ChatState>)> {
    let req = body(payload)?;
    blocking(move || {
        let report: Report = state.store.get(Kind::Reports, &req.report_id)?;
        let record = load_corpus(&state.store, &report.input_manifest.corpus_id)?;
        let session = state.pipeline.open_chat(&report, &record.corpus);
        state.store.put(Kind::Chats, &session.id, &session)?;
        Ok((StatusCode::CREATED, Json(ChatState { id: session.id.clone(), report_id: report.id, turns: 0 })))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageBody {
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageReply {
    pub answer: String,
    pub turns: usize,
    pub dropped_turns: usize,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<MessageBody>, JsonRejection>,
) -> ApiResult<Json<MessageReply>> {
    let req = body(payload)?;
    if !state.store.exists(Kind::Chats, &id) {
        return Err(ServiceError::NotFound(format!("chat `{id}`")));
    }
    let lock = state.chat_lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let mut session: ChatSession = state.store.get(Kind::Chats, &id)?;
        let reply = state.pipeline.chat(&mut session, &req.question)?;
        state.store.put(Kind::Chats, &id, &session)?;
        Ok(Json(MessageReply { answer: reply.answer, turns: session.turns().len(), dropped_turns: reply.dropped_turns }))
    })
    .await
}

/// Enriched posts of the latest enrichment, for callers that need them.
pub fn latest_enriched_posts(store: &Store, corpus_id: &str) -> ApiResult<Option<Vec<EnrichedPost>>> {
    Ok(latest_enrichment(store, corpus_id)?.map(|r| r.posts))
}
