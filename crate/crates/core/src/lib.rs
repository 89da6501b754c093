//! Crisis-event social media analysis: ingestion, multi-dimensional
//! enrichment, topic modelling, stratified sampling, grounded report
//! generation and evaluation.

pub mod classify;
pub mod corpus;
pub mod evalsuite;
pub mod gateway;
pub mod reportgen;
pub mod sample;
pub mod synth;
pub mod text;
pub mod topics;

pub use classify::{
    classify_post, enrich_corpus, extract_locations, BackendRegistry, ClassDistribution, ClassifierBackend, ClassifyError,
    DimensionSchema, EnrichedPost, Gazetteer, LocationContext, LocationMention,
};
pub use corpus::{ingest_posts, Corpus, CorpusError, DateRange, Post};
pub use gateway::{ChatGateway, ChatMessage, ChatRequest, Embedder, GatewayError};
pub use evalsuite::{compare_modes, coverage_judge, ComparisonTable, EvalError, MetricScore};
pub use reportgen::{generate_report, InputManifest, Report, ReportError, ReportKind, ReportMode, ReportRequest, TokenBudget};
pub use sample::{allocate, build_sample, Sample, SampleError, SamplingSpec};
pub use topics::{select_topic_count, TopicModel};
