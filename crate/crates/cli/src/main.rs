//! Operator CLI: ingest feeds, process the queue, serve the API, resolve
//! a single company name, or score a labeled dataset.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use tickerwire_core::config::PipelineConfig;
use tickerwire_core::pipeline::{
    run_eval, run_ingest, run_match, run_process, run_serve, PipelineContext, PipelineError,
};

#[derive(Parser)]
#[command(name = "tickerwire", version, about = "Financial news structuring pipeline")]
struct Cli {
    /// Path to the pipeline config file.
    #[arg(short, long, global = true, default_value = "config/example.toml")]
    config: PathBuf,

    /// Emit logs as JSON lines instead of human-readable text.
    #[arg(long, global = true)]
    log_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pull configured feeds and queue fresh articles.
    Ingest,
    /// Drain the queue: extract, validate tickers, enrich, store.
    Process,
    /// Serve stored records over HTTP.
    Serve {
        /// Listen address, overriding the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Resolve one company name against the reference data.
    Match {
        /// The company name to resolve.
        query: String,
    },
    /// Score a labeled dataset and print the summary.
    Eval {
        /// Path to a .csv or .jsonl dataset.
        dataset: PathBuf,
        /// Directory to write the report files into.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging(json: bool) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn load_context(config_path: &PathBuf) -> anyhow::Result<PipelineContext> {
    let config = PipelineConfig::load(config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    Ok(PipelineContext::load(config)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest => {
            let ctx = load_context(&cli.config)?;
            let summary = run_ingest(&ctx)?;
            println!("ingested {}", summary.ingested);
            if summary.duplicates > 0 {
                println!("skipped {} already-seen articles", summary.duplicates);
            }
            if summary.failures > 0 {
                println!("skipped {} failed items", summary.failures);
            }
            Ok(())
        }
        Command::Process => {
            let ctx = load_context(&cli.config)?;
            let summary = run_process(&ctx)?;
            println!("stored {} records", summary.stored);
            if summary.failed > 0 {
                println!("set aside {} failed articles", summary.failed);
            }
            for outcome in &summary.outcomes {
                for mention in &outcome.resolutions {
                    println!(
                        "  {} -> {} ({:?})",
                        mention.company_name, mention.ticker, mention.resolution
                    );
                }
            }
            Ok(())
        }
        Command::Serve { bind } => {
            let ctx = load_context(&cli.config)?;
            run_serve(&ctx, bind.as_deref())?;
            Ok(())
        }
        Command::Match { query } => {
            let ctx = load_context(&cli.config)?;
            let result = run_match(&ctx, &query)?;
            let flag = if result.via_override { " (override)" } else { "" };
            println!(
                "{} -> {} [{}]{}",
                query, result.best.ticker, result.best.name, flag
            );
            for candidate in result.ranked_runners_up.iter().take(5) {
                println!(
                    "  runner-up: {} [{}] common_words={} lev={} lcs={}",
                    candidate.ticker,
                    candidate.name,
                    candidate.common_words,
                    candidate.lev_clean,
                    candidate.lcs_clean
                );
            }
            Ok(())
        }
        Command::Eval { dataset, out } => {
            let report = run_eval(&dataset, out.as_deref())?;
            println!("articles scored: {}", report.n_articles);
            println!(
                "exactly one system ticker: {:.1}%",
                report.pct_tickers_exactly(1)
            );
            println!(
                "at most four system tickers: {:.1}%",
                report.pct_tickers_at_most(4)
            );
            println!("no missing tickers: {:.1}%", report.pct_no_missing);
            println!("any additional tickers: {:.1}%", report.pct_any_additional);
            for (provider, row) in &report.per_provider {
                println!(
                    "  {}: {} articles, {:.1}% no missing, {:.1}% any additional",
                    provider, row.n_articles, row.pct_no_missing, row.pct_any_additional
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_json);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            if let Some(PipelineError::AlreadyRunning(path)) =
                error.downcast_ref::<PipelineError>()
            {
                eprintln!("error: another run is in progress (lock: {})", path.display());
            } else {
                eprintln!("error: {error:#}");
            }
            ExitCode::FAILURE
        }
    }
}
