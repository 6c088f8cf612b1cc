//! End-to-end orchestration: feed ingestion into a resumable queue,
//! queue processing through extraction, validation, enrichment, and
//! storage, plus the match, eval, and serve entry points.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use url::Url;

use crate::api::{self, ApiError};
use crate::config::{ConfigError, PipelineConfig};
use crate::enrich::{assemble, InsightRecord};
use crate::evaluation::{
    build_report, load_labeled_dataset, write_report, EvalError, EvalReport,
};
use crate::extract::{
    run_extraction, AuditLog, CallError, ExtractError, HttpProvider, HttpProviderConfig,
    MockProvider, PromptConfig, Provider, RetryPolicy,
};
use crate::ingest::{
    dedupe, fetch_article, parse_feed, resolve_redirects, HttpClient, HttpClientConfig,
    IngestError, RawArticle, SeenIds,
};
use crate::matcher::{map_company, JunkListError, JunkWords, MatchError, MatchResult};
use crate::refdata::{MissTracker, Overrides, RefDataError, ReferenceStore};
use crate::store::{Store, StoreError};
use crate::validate::{validate_mentions, DiscardRecord, ValidateError, VerifiedMention};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    RefData(#[from] RefDataError),
    #[error(transparent)]
    JunkList(#[from] JunkListError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("another process run holds the lock at {0}")]
    AlreadyRunning(PathBuf),
    #[error("provider unavailable after storing {stored} records: {message}")]
    ProviderUnavailable { stored: usize, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Config plus the loaded reference data every stage shares.
pub struct PipelineContext {
    pub config: PipelineConfig,
    pub junk: JunkWords,
    pub reference: Arc<ReferenceStore>,
    pub overrides: Overrides,
}

impl PipelineContext {
    pub fn load(config: PipelineConfig) -> Result<PipelineContext, PipelineError> {
        let junk = match &config.reference.junk_words {
            Some(path) => JunkWords::from_file(path)?,
            None => JunkWords::default_list(),
        };
        let reference = Arc::new(ReferenceStore::load(&config.reference.snapshot)?);
        let overrides = match &config.reference.overrides {
            Some(path) => Overrides::load(path, &junk)?,
            None => Overrides::empty(),
        };
        Ok(PipelineContext {
            config,
            junk,
            reference,
            overrides,
        })
    }

    /// Instantiate the configured provider.
    pub fn provider(&self) -> Box<dyn Provider> {
        let p = &self.config.provider;
        if p.mock {
            Box::new(MockProvider::new())
        } else {
            Box::new(HttpProvider::new(HttpProviderConfig {
                endpoint: p.endpoint.clone().expect("validated at load"),
                model: p.model.clone().expect("validated at load"),
                auth_token: p
                    .auth_env
                    .as_ref()
                    .and_then(|name| std::env::var(name).ok()),
                rate_limit_rpm: p.rate_limit_rpm,
                timeout: Duration::from_secs(60),
            }))
        }
    }

    fn pending_dir(&self) -> PathBuf {
        self.config.store.queue_dir.join("pending")
    }

    fn failed_dir(&self) -> PathBuf {
        self.config.store.queue_dir.join("failed")
    }

    fn seen_path(&self) -> PathBuf {
        self.config.store.queue_dir.join("seen_ids.txt")
    }
}

/// Exclusive-run guard: a lock file that exists only while one process
/// run owns the queue.
pub struct QueueLock {
    path: PathBuf,
}

impl QueueLock {
    pub fn acquire(queue_dir: &Path) -> Result<QueueLock, PipelineError> {
        fs::create_dir_all(queue_dir).map_err(|e| io_err(queue_dir, e))?;
        let path = queue_dir.join("process.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(QueueLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::AlreadyRunning(path))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for QueueLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    /// Articles newly queued for processing.
    pub ingested: usize,
    /// Feed items skipped because their article was seen before.
    pub duplicates: usize,
    /// Feed items or feeds that errored and were skipped.
    pub failures: usize,
}

fn read_feed_source(client: &HttpClient, url: &Url) -> Result<String, IngestError> {
    if url.scheme() == "file" {
        let path = url
            .to_file_path()
            .map_err(|_| IngestError::BadUrl(url.to_string()))?;
        fs::read_to_string(&path).map_err(IngestError::Io)
    } else {
        client.get_text(url)
    }
}

fn fetch_feed_item(
    client: &HttpClient,
    item: &crate::ingest::FeedItem,
    max_hops: usize,
) -> Result<RawArticle, IngestError> {
    let final_url = if matches!(item.aggregator_link.scheme(), "http" | "https") {
        resolve_redirects(client, &item.aggregator_link, max_hops)?
    } else {
        item.aggregator_link.clone()
    };
    Ok(fetch_article(client, &final_url)?.with_feed_metadata(item))
}

/// Pull every configured feed, resolve and fetch fresh articles, and
/// queue them as pending work. Already-seen articles are skipped; feed
/// or item failures are logged and skipped.
pub fn run_ingest(ctx: &PipelineContext) -> Result<IngestSummary, PipelineError> {
    let client = HttpClient::new(HttpClientConfig {
        per_host_delay: Duration::from_millis(ctx.config.ingest.per_host_delay_ms),
        ..HttpClientConfig::default()
    });
    let pending = ctx.pending_dir();
    fs::create_dir_all(&pending).map_err(|e| io_err(&pending, e))?;
    let seen_path = ctx.seen_path();
    let seen = if seen_path.exists() {
        SeenIds::load(&seen_path)?
    } else {
        SeenIds::new()
    };

    let mut articles = Vec::new();
    let mut failures = 0usize;
    for feed_url in ctx.config.feed_urls() {
        let xml = match read_feed_source(&client, &feed_url) {
            Ok(xml) => xml,
            Err(error) => {
                tracing::warn!(feed = %feed_url, %error, "feed fetch failed");
                failures += 1;
                continue;
            }
        };
        let items = match parse_feed(&xml, Some(&feed_url)) {
            Ok(items) => items,
            Err(error) => {
                tracing::warn!(feed = %feed_url, %error, "feed unparseable");
                failures += 1;
                continue;
            }
        };
        for item in items {
            match fetch_feed_item(&client, &item, ctx.config.ingest.max_hops) {
                Ok(article) => articles.push(article),
                Err(error) => {
                    tracing::warn!(link = %item.aggregator_link, %error, "item skipped");
                    failures += 1;
                }
            }
        }
    }

    let fetched = articles.len();
    let fresh = dedupe(articles, &seen);
    let duplicates = fetched - fresh.len();
    for article in &fresh {
        let path = pending.join(format!("{}.json", article.id));
        let json = serde_json::to_string(article).expect("articles always serialize");
        fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    }
    seen.save(&seen_path)?;
    Ok(IngestSummary {
        ingested: fresh.len(),
        duplicates,
        failures,
    })
}

/// Everything [`process_article`] needs besides the article itself.
pub struct ProcessDeps<'a> {
    pub reference: &'a ReferenceStore,
    pub overrides: &'a Overrides,
    pub junk: &'a JunkWords,
    pub provider: &'a dyn Provider,
    pub retry: &'a RetryPolicy,
    pub prompt: &'a PromptConfig,
    pub misses: &'a MissTracker,
    pub audit: Option<&'a AuditLog>,
}

#[derive(Debug, Error)]
pub enum ArticleError {
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error("enrichment failed: {0}")]
    Enrich(#[from] RefDataError),
}

impl ArticleError {
    /// True when the provider is down (as opposed to one bad article),
    /// so processing should halt and leave the queue resumable.
    pub fn is_provider_unavailable(&self) -> bool {
        matches!(
            self,
            ArticleError::Extract(ExtractError::Provider(CallError::Unavailable { .. }))
                | ArticleError::Validate(ValidateError::Provider(CallError::Unavailable { .. }))
        )
    }
}

#[derive(Debug, Clone)]
pub struct ProcessedArticle {
    pub record: InsightRecord,
    pub verified: Vec<VerifiedMention>,
    pub discards: Vec<DiscardRecord>,
}

/// Run one article through extraction, ticker validation, and enrichment.
pub fn process_article(
    article: &RawArticle,
    deps: &ProcessDeps,
) -> Result<ProcessedArticle, ArticleError> {
    let (draft, _exchanges) =
        run_extraction(deps.provider, article, deps.prompt, deps.retry, deps.audit)?;
    let outcome = validate_mentions(
        &draft,
        deps.reference,
        deps.overrides,
        deps.junk,
        deps.provider,
        deps.retry,
        deps.misses,
        deps.audit,
    )?;
    let record = assemble(article, &draft, &outcome.verified, deps.reference)?;
    Ok(ProcessedArticle {
        record,
        verified: outcome.verified,
        discards: outcome.discards,
    })
}

#[derive(Debug, Clone)]
pub struct ArticleOutcome {
    pub article_id: String,
    pub record_id: String,
    pub tickers: Vec<String>,
    pub resolutions: Vec<VerifiedMention>,
    pub discarded: usize,
}

#[derive(Debug, Default)]
pub struct ProcessSummary {
    pub stored: usize,
    pub failed: usize,
    pub outcomes: Vec<ArticleOutcome>,
}

fn flush_side_logs(
    ctx: &PipelineContext,
    discards: &[DiscardRecord],
    misses: &MissTracker,
) -> Result<(), PipelineError> {
    let dir = ctx
        .config
        .store
        .path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    if !discards.is_empty() {
        let path = dir.join("discards.jsonl");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        for discard in discards {
            let line = serde_json::to_string(discard).expect("discards always serialize");
            writeln!(file, "{line}").map_err(|e| io_err(&path, e))?;
        }
    }
    misses.export_csv(&dir.join("misses.csv"))?;
    Ok(())
}

/// Drain the pending queue: each article runs in isolation, failures move
/// aside, and a dead provider halts with the queue intact for a retry.
pub fn run_process(ctx: &PipelineContext) -> Result<ProcessSummary, PipelineError> {
    let _lock = QueueLock::acquire(&ctx.config.store.queue_dir)?;
    let pending = ctx.pending_dir();
    fs::create_dir_all(&pending).map_err(|e| io_err(&pending, e))?;
    let store = Store::open(&ctx.config.store.path, Some(ctx.reference.clone()))?;
    let provider = ctx.provider();
    let audit = match &ctx.config.provider.audit_log {
        Some(path) => Some(AuditLog::open(path).map_err(|e| io_err(path, e))?),
        None => None,
    };
    let retry = RetryPolicy::default();
    let prompt = PromptConfig {
        body_char_cap: ctx.config.extract.body_char_cap,
    };
    let misses = MissTracker::new();

    let mut queued: Vec<PathBuf> = fs::read_dir(&pending)
        .map_err(|e| io_err(&pending, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    queued.sort();

    let mut summary = ProcessSummary::default();
    let mut discard_log: Vec<DiscardRecord> = Vec::new();

    for path in &queued {
        let article: RawArticle = match fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
        {
            Ok(article) => article,
            Err(error) => {
                tracing::warn!(file = %path.display(), %error, "queued article unreadable");
                move_to_failed(ctx, path)?;
                summary.failed += 1;
                continue;
            }
        };
        let deps = ProcessDeps {
            reference: &ctx.reference,
            overrides: &ctx.overrides,
            junk: &ctx.junk,
            provider: provider.as_ref(),
            retry: &retry,
            prompt: &prompt,
            misses: &misses,
            audit: audit.as_ref(),
        };
        match process_article(&article, &deps) {
            Ok(processed) => {
                let record_id = store.put(processed.record.clone())?;
                summary.outcomes.push(ArticleOutcome {
                    article_id: article.id.clone(),
                    record_id,
                    tickers: processed.record.tickers.iter().cloned().collect(),
                    resolutions: processed.verified,
                    discarded: processed.discards.len(),
                });
                discard_log.extend(processed.discards);
                summary.stored += 1;
                fs::remove_file(path).map_err(|e| io_err(path, e))?;
            }
            Err(error) if error.is_provider_unavailable() => {
                flush_side_logs(ctx, &discard_log, &misses)?;
                return Err(PipelineError::ProviderUnavailable {
                    stored: summary.stored,
                    message: error.to_string(),
                });
            }
            Err(error) => {
                tracing::warn!(article = %article.id, %error, "article failed; set aside");
                move_to_failed(ctx, path)?;
                summary.failed += 1;
            }
        }
    }

    flush_side_logs(ctx, &discard_log, &misses)?;
    Ok(summary)
}

fn move_to_failed(ctx: &PipelineContext, path: &Path) -> Result<(), PipelineError> {
    let failed = ctx.failed_dir();
    fs::create_dir_all(&failed).map_err(|e| io_err(&failed, e))?;
    let dest = failed.join(path.file_name().unwrap_or_default());
    fs::rename(path, &dest).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Resolve one company name against the loaded reference data.
pub fn run_match(ctx: &PipelineContext, query: &str) -> Result<MatchResult, PipelineError> {
    let pairs = ctx.reference.name_ticker_pairs();
    Ok(map_company(query, &pairs, &ctx.junk, ctx.overrides.map())?)
}

/// Score a labeled dataset; optionally write the report files.
pub fn run_eval(dataset: &Path, out_dir: Option<&Path>) -> Result<EvalReport, PipelineError> {
    let rows = load_labeled_dataset(dataset)?;
    let report = build_report(&rows)?;
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

/// Serve the store over HTTP until interrupted.
pub fn run_serve(ctx: &PipelineContext, bind_override: Option<&str>) -> Result<(), PipelineError> {
    let store = Arc::new(Store::open(
        &ctx.config.store.path,
        Some(ctx.reference.clone()),
    )?);
    let bind = bind_override.unwrap_or(&ctx.config.serve.bind);
    api::serve_blocking(bind, store)?;
    Ok(())
}
