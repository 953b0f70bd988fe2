use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use listchurn::pipeline::{self, Overrides, Pipeline, PipelineError, RunConfig, Stage};
use listchurn::SldMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    CrawlSites,
    CrawlLists,
    Extract,
    Match,
    Metrics,
    Report,
    Simulate,
    All,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::CrawlSites => Stage::CrawlSites,
            StageArg::CrawlLists => Stage::CrawlLists,
            StageArg::Extract => Stage::Extract,
            StageArg::Match => Stage::Match,
            StageArg::Metrics => Stage::Metrics,
            StageArg::Report => Stage::Report,
            StageArg::Simulate => Stage::Simulate,
            StageArg::All => Stage::All,
        }
    }
}

/// Longitudinal ad/tracker blacklist analysis over archived snapshots.
///
/// Exit codes: 0 success, 2 config error, 3 partial crawl (transport
/// failures recorded as skips), 4 store conflict, 5 missing prior stage,
/// 1 other failures. Errors are also printed to stderr as one JSON line.
#[derive(Debug, Parser)]
#[command(name = "listchurn", version)]
struct Cli {
    #[arg(value_enum)]
    stage: StageArg,
    /// Run configuration (TOML); for `simulate`, a scenario file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    from_year: Option<i32>,
    #[arg(long)]
    to_year: Option<i32>,
    #[arg(long)]
    interval_months: Option<u8>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// suffix-aware or naive
    #[arg(long)]
    psl_mode: Option<SldMode>,
    /// Requests per second per worker (0 disables pacing).
    #[arg(long)]
    rate_limit: Option<f64>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

fn run(cli: &Cli) -> Result<i32, PipelineError> {
    let stage = Stage::from(cli.stage);
    if let Stage::Simulate = stage {
        let spec = pipeline::load_scenario(&cli.config)?;
        let out = match &cli.out {
            Some(o) => absolute(o),
            None => cli.config.parent().unwrap_or(Path::new(".")).join("simulated"),
        };
        std::fs::create_dir_all(&out)?;
        let config = pipeline::simulate(&spec, &out)?;
        println!("{}", config.display());
        return Ok(0);
    }
    let mut config = RunConfig::load(&cli.config)?;
    config.apply(&Overrides {
        from_year: cli.from_year,
        to_year: cli.to_year,
        interval_months: cli.interval_months,
        cache_dir: cli.cache_dir.as_deref().map(absolute),
        psl_mode: cli.psl_mode,
        rate_limit: cli.rate_limit,
        max_parallel: cli.max_parallel,
        out: cli.out.as_deref().map(absolute),
    });
    let pipeline = Pipeline::new(config)?;
    let outcome = pipeline.run(stage)?;
    if outcome.transport_failures > 0 {
        let record = serde_json::json!({
            "error": "partial-crawl",
            "message": format!("{} intervals lost to transport failures; rerun to resume", outcome.transport_failures),
            "exit_code": outcome.exit_code(),
        });
        eprintln!("{record}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
