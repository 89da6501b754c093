//! `crisis` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use crisis_core::reportgen::{ReportKind, ReportMode};
use crisis_service::pipeline::{CorpusRecord, SampleRecord, TopicRecord};
use crisis_service::{router, AppState, Config, Kind, Pipeline, ServiceError, Store};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "crisis", version, about = "Crisis-event social media reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Use deterministic local stand-ins for every model endpoint.
    #[arg(long)]
    dry_run: bool,
    /// Artifact store directory; overrides the config.
    #[arg(long)]
    store_root: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest, enrich, model topics, sample, report and evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        #[arg(long, value_parser = parse_kind)]
        report_kind: Option<ReportKind>,
        /// City for city_subevents reports.
        #[arg(long)]
        city: Option<String>,
        #[arg(long)]
        word_limit: Option<u32>,
        /// Input records; overrides the config.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Sample size for advanced mode; overrides the config.
        #[arg(long)]
        sample_size: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address; overrides the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Basic,
    Advanced,
    Both,
}

fn parse_kind(s: &str) -> Result<ReportKind, String> {
    s.parse().map_err(|e: crisis_core::ReportError| e.to_string())
}

/// Failure with its exit code.
struct Failure {
    exit: u8,
    code: String,
    message: String,
    detail: String,
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let body = e.body();
        let exit = if matches!(e, ServiceError::Config(_)) { 2 } else { 1 };
        Failure { exit, code: body.code, message: body.message, detail: body.detail }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ServiceError>() {
            Ok(se) => se.into(),
            Err(e) => Failure { exit: 1, code: "internal".into(), message: "command failed".into(), detail: format!("{e:#}") },
        }
    }
}

fn load_config(common: &Common) -> Result<(Config, Store), Failure> {
    if !common.config.is_file() {
        return Err(ServiceError::Config(format!("config file `{}` not found", common.config.display())).into());
    }
    let mut config = Config::load(&common.config)?;
    if let Some(root) = &common.store_root {
        config.store_root = Some(root.clone());
    }
    let root = config.store_root.clone().unwrap_or_else(|| PathBuf::from("store"));
    let store = Store::open(&root)?;
    Ok((config, store))
}

fn rel(store: &Store, kind: Kind, id: &str) -> String {
    store.path(kind, id).display().to_string()
}

#[allow(clippy::too_many_arguments)]
fn run(
    common: &Common,
    mode: ModeArg,
    report_kind: Option<ReportKind>,
    city: Option<String>,
    word_limit: Option<u32>,
    input: Option<PathBuf>,
    sample_size: Option<usize>,
) -> Result<Value, Failure> {
    let (mut config, store) = load_config(common)?;
    if let Some(kind) = report_kind {
        config.report.kind = kind;
    }
    if city.is_some() {
        config.report.city = city;
    }
    if let Some(w) = word_limit {
        config.report.word_limit = w;
    }
    let input_cfg = config.input.clone();
    let (path, format, field_map, corpus_id) = match (input, input_cfg) {
        (Some(p), cfg) => {
            let format = p
                .extension()
                .and_then(|e| e.to_str())
                .and_then(|e| e.parse().ok())
                .or(cfg.as_ref().map(|c| c.format))
                .unwrap_or(crisis_core::corpus::RecordFormat::Jsonl);
            (p, format, cfg.as_ref().and_then(|c| c.field_map.clone()), None)
        }
        (None, Some(cfg)) => (cfg.path, cfg.format, cfg.field_map, cfg.corpus_id),
        (None, None) => return Err(ServiceError::Config("no input: set [input] in the config or pass --input".into()).into()),
    };
    let pipeline = Pipeline::new(config, common.dry_run)?;

    let bytes = std::fs::read(&path).with_context(|| format!("cannot read input `{}`", path.display()))?;
    let record: CorpusRecord = pipeline.ingest(&bytes, format, &field_map.unwrap_or_default(), corpus_id)?;
    let corpus = &record.corpus;
    store.put(Kind::Corpora, &corpus.corpus_id, &record)?;
    tracing::info!(posts = corpus.len(), dropped = record.dropped, "ingested");

    let mut artifacts = json!({
        "corpus": rel(&store, Kind::Corpora, &corpus.corpus_id),
        "posts": corpus.len(),
        "dropped": record.dropped,
    });

    let modes: Vec<ReportMode> = match mode {
        ModeArg::Basic => vec![ReportMode::Basic],
        ModeArg::Advanced => vec![ReportMode::Advanced],
        ModeArg::Both => vec![ReportMode::Basic, ReportMode::Advanced],
    };
    let advanced = modes.contains(&ReportMode::Advanced);

    let mut topics: Option<TopicRecord> = None;
    let mut sample: Option<SampleRecord> = None;
    if advanced {
        let enrichment = pipeline.enrich(corpus, &pipeline.config.enrich.dimensions.clone())?;
        store.put(Kind::Enrichments, &enrichment.id, &enrichment)?;
        artifacts["enrichment"] = json!(rel(&store, Kind::Enrichments, &enrichment.id));

        let (t, _) = pipeline.topics(corpus, None)?;
        store.put(Kind::Topics, &t.id, &t)?;
        artifacts["topics"] = json!(rel(&store, Kind::Topics, &t.id));
        artifacts["selected_k"] = json!(t.curve.selected_k);

        let spec = pipeline.sampling_spec(sample_size, pipeline.config.report.kind, pipeline.config.report.city.as_deref());
        let s = pipeline.sample(&enrichment, Some(&t), &spec)?;
        store.put(Kind::Samples, &s.id, &s)?;
        artifacts["sample"] = json!(rel(&store, Kind::Samples, &s.id));
        artifacts["sample_size"] = json!(s.sample.len());
        topics = Some(t);
        sample = Some(s);
    }

    let mut reports = Vec::new();
    for m in &modes {
        let request = pipeline.report_request(*m);
        let report = pipeline.report(corpus, &request, sample.as_ref())?;
        store.put(Kind::Reports, &report.id, &report)?;
        artifacts["reports"][m.to_string()] = json!(rel(&store, Kind::Reports, &report.id));
        reports.push(report);
    }

    if let [basic, adv] = reports.as_slice() {
        let items = if pipeline.config.eval.items.is_empty() {
            topics.as_ref().map(|t| t.items(pipeline.config.eval.terms_per_item)).unwrap_or_default()
        } else {
            pipeline.config.eval.items.clone()
        };
        let table = pipeline.compare(basic, adv, corpus, &items)?;
        let id = crisis_service::pipeline::record_id(&(&basic.id, &adv.id, &items));
        let eval = crisis_service::pipeline::EvalRecord {
            id: id.clone(),
            basic_report_id: basic.id.clone(),
            advanced_report_id: adv.id.clone(),
            table,
            created_at: chrono::Utc::now(),
        };
        store.put(Kind::Evals, &id, &eval)?;
        let text_path = store.root().join(Kind::Evals.dir()).join(format!("{id}.txt"));
        std::fs::write(&text_path, eval.table.render_text()).context("cannot write comparison table")?;
        artifacts["eval"] = json!(rel(&store, Kind::Evals, &id));
        artifacts["eval_table"] = json!(text_path.display().to_string());
    }
    Ok(artifacts)
}

fn serve(common: &Common, bind: Option<String>) -> Result<(), Failure> {
    let (mut config, store) = load_config(common)?;
    if let Some(b) = bind {
        config.server.bind = b;
    }
    let addr = config.server.bind.clone();
    let pipeline = Pipeline::new(config, common.dry_run)?;
    let state = AppState::new(pipeline, store)?;
    let rt = tokio::runtime::Runtime::new().context("cannot start runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("cannot bind `{addr}`"))?;
        tracing::info!(%addr, "listening");
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server failed")
    })?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            emit(&Failure { exit: 2, code: "usage".into(), message: "invalid arguments".into(), detail });
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.command {
        Command::Run { common, mode, report_kind, city, word_limit, input, sample_size } => {
            run(common, *mode, *report_kind, city.clone(), *word_limit, input.clone(), *sample_size)
                .map(|artifacts| println!("{artifacts}"))
        }
        Command::Serve { common, bind } => serve(common, bind.clone()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            emit(&f);
            ExitCode::from(f.exit)
        }
    }
}

/// One JSON line on stderr.
fn emit(f: &Failure) {
    eprintln!("{}", json!({ "code": f.code, "message": f.message, "detail": f.detail }));
}
