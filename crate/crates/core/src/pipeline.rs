//! End-to-end run: crawl, extract, match, metrics, report.
//!
//! Every stage reads the previous stage's artifacts from the output
//! directory and rewrites its own, so stages can be re-run independently.
//!
//! ```text
//! <out>/crawl/page_captures.jsonl   crawl-sites
//! <out>/crawl/page_skips.jsonl
//! <out>/crawl/list_captures.jsonl   crawl-lists
//! <out>/crawl/list_skips.jsonl
//! <out>/crawl/bodies/<sha256>
//! <out>/store/observations.jsonl    extract
//! <out>/store/lists.jsonl
//! <out>/store/detections.jsonl      match
//! <out>/metrics/<kind>.csv          metrics
//! <out>/reports/<kind>.csv          report
//! <out>/reports/<kind>.schema.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::archive::{
    body_digest, schedule, Archive, CachedArchive, HttpArchive, MementoClient, MementoRef, PageCapture, ResponseCache,
    RetryPolicy, SkipReason, TargetDate,
};
use crate::blacklist::{BlacklistSnapshot, FormatKind};
use crate::domain::{registrable_domain, url_registrable_domain, RegistrableDomain, SldMode};
use crate::fixture::{generate_corpus, render_archive, ScenarioSpec};
use crate::metrics::{analyze, AnalysisOptions};
use crate::page::observe_page;
use crate::report::{self, ReportError, ReportKind};
use crate::store::{
    self, FirstSeenMode, ListRecord, ListSelector, ObservationRecord, SiteScope, Store, StoreError, DETECTIONS_FILE,
    LISTS_FILE, OBSERVATIONS_FILE,
};
use crate::suffix::{SuffixSections, SuffixTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlacklistSource {
    /// Archived URL of the list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// A local file (with `date`) or a directory of `YYYY-MM-DD.*` files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FormatKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub from_year: i32,
    pub to_year: i32,
    #[serde(default = "default_interval")]
    pub interval_months: u8,
    /// First year of blacklist snapshots to crawl; defaults to `from_year`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list_from_year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub psl_mode: SldMode,
    /// Include the private-domain section of the suffix list.
    #[serde(default)]
    pub psl_private: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_archive")]
    pub archive_base: String,
    /// Serve only from the response cache.
    #[serde(default)]
    pub offline: bool,
    /// Requests per second per worker; 0 disables pacing.
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_tries")]
    pub max_tries_per_interval: u32,
    #[serde(default)]
    pub first_seen: FirstSeenMode,
    /// Country code -> file of hostnames.
    #[serde(default)]
    pub site_lists: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub blacklists: BTreeMap<String, BlacklistSource>,
}

fn default_interval() -> u8 {
    3
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_archive() -> String {
    "https://web.archive.org".to_string()
}
fn default_rate() -> f64 {
    1.0
}
fn default_parallel() -> usize {
    4
}
fn default_tries() -> u32 {
    4
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub from_year: Option<i32>,
    pub to_year: Option<i32>,
    pub interval_months: Option<u8>,
    pub cache_dir: Option<PathBuf>,
    pub psl_mode: Option<SldMode>,
    pub rate_limit: Option<f64>,
    pub max_parallel: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Loads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.rebase(&base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
        self.site_lists.values_mut().for_each(fix);
        for source in self.blacklists.values_mut() {
            if let Some(p) = &mut source.path {
                fix(p);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.from_year {
            self.from_year = v;
        }
        if let Some(v) = o.to_year {
            self.to_year = v;
        }
        if let Some(v) = o.interval_months {
            self.interval_months = v;
        }
        if let Some(v) = &o.cache_dir {
            self.cache_dir = Some(v.clone());
        }
        if let Some(v) = o.psl_mode {
            self.psl_mode = v;
        }
        if let Some(v) = o.rate_limit {
            self.rate_limit = v;
        }
        if let Some(v) = o.max_parallel {
            self.max_parallel = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.from_year > self.to_year {
            return bad(format!("from_year {} is after to_year {}", self.from_year, self.to_year));
        }
        let sane = 1990..=2100;
        if !sane.contains(&self.from_year) || !sane.contains(&self.to_year) {
            return bad("years must lie within 1990..=2100".into());
        }
        if let Some(y) = self.list_from_year {
            if !sane.contains(&y) || y > self.to_year {
                return bad(format!("list_from_year {y} out of range"));
            }
        }
        if !matches!(self.interval_months, 1 | 2 | 3 | 4 | 6 | 12) {
            return bad(format!("interval_months {} does not divide the year", self.interval_months));
        }
        if self.site_lists.is_empty() {
            return bad("at least one site list is required".into());
        }
        if self.blacklists.is_empty() {
            return bad("at least one blacklist is required".into());
        }
        if !(self.rate_limit >= 0.0 && self.rate_limit.is_finite()) {
            return bad("rate_limit must be a non-negative number".into());
        }
        if self.max_parallel == 0 || self.max_tries_per_interval == 0 {
            return bad("max_parallel and max_tries_per_interval must be positive".into());
        }
        if self.offline && self.cache_dir.is_none() {
            return bad("offline runs need cache_dir".into());
        }
        for (id, s) in &self.blacklists {
            if id.is_empty() || id == store::UNION_LIST {
                return bad(format!("invalid blacklist id {id:?}"));
            }
            if s.url.is_some() == s.path.is_some() {
                return bad(format!("blacklist {id}: give exactly one of url or path"));
            }
        }
        Ok(())
    }

    fn policy(&self) -> RetryPolicy {
        let politeness_delay =
            if self.rate_limit > 0.0 { Duration::from_secs_f64(1.0 / self.rate_limit) } else { Duration::ZERO };
        RetryPolicy {
            max_tries_per_interval: self.max_tries_per_interval,
            politeness_delay,
            max_parallel: self.max_parallel,
            ..RetryPolicy::default()
        }
    }

    fn suffix_table(&self) -> &'static SuffixTable {
        SuffixTable::bundled_with(if self.psl_private { SuffixSections::All } else { SuffixSections::IcannOnly })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    CrawlSites,
    CrawlLists,
    Extract,
    Match,
    Metrics,
    Report,
    Simulate,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::CrawlSites => "crawl-sites",
            Stage::CrawlLists => "crawl-lists",
            Stage::Extract => "extract",
            Stage::Match => "match",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
            Stage::Simulate => "simulate",
            Stage::All => "all",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {missing} has not been run")]
    MissingStage { missing: &'static str },
    #[error("store conflict: {0}")]
    StoreConflict(String),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ConflictingRecord { .. } => PipelineError::StoreConflict(e.to_string()),
            other => PipelineError::Store(other),
        }
    }
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::StoreConflict(_) => 4,
            PipelineError::MissingStage { .. } => 5,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::MissingStage { .. } => "missing-stage",
            PipelineError::StoreConflict(_) => "store-conflict",
            PipelineError::Store(_) => "store",
            PipelineError::Report(_) => "report",
            PipelineError::Io(_) => "io",
        }
    }

    /// One-line JSON error record.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code() })
            .to_string()
    }
}

/// A fetched snapshot, body stored separately by digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureRecord {
    pub id: String,
    pub original_url: String,
    pub year: i32,
    pub quarter: u8,
    pub memento_url: String,
    pub memento_timestamp: DateTime<Utc>,
    pub delta_days: i64,
    pub over_gap: bool,
    pub fetch_status: u16,
    pub body_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub year: i32,
    pub quarter: u8,
    #[serde(flatten)]
    pub reason: SkipReason,
}

/// Counts reported by a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub captures: usize,
    pub skips: usize,
    /// Intervals lost to transport failures; a rerun may recover them.
    pub transport_failures: usize,
}

impl RunOutcome {
    fn add(&mut self, o: RunOutcome) {
        self.captures += o.captures;
        self.skips += o.skips;
        self.transport_failures += o.transport_failures;
    }

    /// 0, or 3 when the crawl is incomplete.
    pub fn exit_code(&self) -> i32 {
        if self.transport_failures > 0 {
            3
        } else {
            0
        }
    }
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn crawl(&self) -> PathBuf {
        self.root.join("crawl")
    }
    fn bodies(&self) -> PathBuf {
        self.crawl().join("bodies")
    }
    fn store(&self) -> PathBuf {
        self.root.join("store")
    }
    fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }
    fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// A site to crawl.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteEntry {
    pub site: RegistrableDomain,
    pub url: String,
    pub countries: BTreeSet<String>,
}

/// Reads `country -> hostname file` lists; a site listed for several
/// countries is crawled once and carries all of their tags.
pub fn load_sites(config: &RunConfig) -> Result<Vec<SiteEntry>, PipelineError> {
    let table = config.suffix_table();
    let mut sites: BTreeMap<RegistrableDomain, SiteEntry> = BTreeMap::new();
    for (country, path) in &config.site_lists {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // Ranked lists come as `rank,host`.
            let host = line.rsplit(',').next().unwrap_or(line).trim();
            let (url, site) = if host.contains("://") {
                (host.to_string(), url_registrable_domain(host, table, config.psl_mode))
            } else {
                (format!("http://{host}/"), registrable_domain(host, table, config.psl_mode))
            };
            let Ok(site) = site else {
                log::warn!("{}: skipping unusable site {host:?}", path.display());
                continue;
            };
            sites
                .entry(site.clone())
                .or_insert_with(|| SiteEntry { site, url, countries: BTreeSet::new() })
                .countries
                .insert(country.clone());
        }
    }
    Ok(sites.into_values().collect())
}

pub struct Pipeline {
    config: RunConfig,
    layout: Layout,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let layout = Layout { root: config.out.clone() };
        Ok(Pipeline { config, layout })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.layout.reports()
    }

    pub fn run(&self, stage: Stage) -> Result<RunOutcome, PipelineError> {
        log::info!("stage {}", stage.name());
        match stage {
            Stage::CrawlSites => self.crawl_sites(),
            Stage::CrawlLists => self.crawl_lists(),
            Stage::Extract => self.extract().map(|_| RunOutcome::default()),
            Stage::Match => self.match_detections().map(|_| RunOutcome::default()),
            Stage::Metrics => self.metrics().map(|_| RunOutcome::default()),
            Stage::Report => self.report().map(|_| RunOutcome::default()),
            Stage::Simulate => Err(PipelineError::Config("simulate takes a scenario file, not a run config".into())),
            Stage::All => {
                let mut outcome = self.crawl_sites()?;
                outcome.add(self.crawl_lists()?);
                self.extract()?;
                self.match_detections()?;
                self.metrics()?;
                self.report()?;
                Ok(outcome)
            }
        }
    }

    fn client(&self) -> Result<MementoClient<Box<dyn Archive>>, PipelineError> {
        let archive: Box<dyn Archive> = match (&self.config.cache_dir, self.config.offline) {
            (Some(dir), true) => Box::new(CachedArchive::offline(ResponseCache::open(dir)?)),
            (Some(dir), false) => Box::new(CachedArchive::recording(HttpArchive::default(), ResponseCache::open(dir)?)),
            (None, _) => Box::new(HttpArchive::default()),
        };
        Ok(MementoClient::new(archive, &self.config.archive_base, self.config.policy()))
    }

    /// Crawls every job over `targets` with bounded parallelism. Results come
    /// back in job order regardless of scheduling.
    fn crawl_jobs(
        &self,
        jobs: &[(String, RegistrableDomain, String)],
        targets: &[TargetDate],
    ) -> Result<(Vec<CaptureRecord>, Vec<SkipRecord>, RunOutcome), PipelineError> {
        let client = self.client()?;
        let bodies = self.layout.bodies();
        fs::create_dir_all(&bodies)?;
        let next = AtomicUsize::new(0);
        type JobResult = Vec<(TargetDate, Result<PageCapture, SkipReason>)>;
        let results: Mutex<Vec<Option<JobResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
        let workers = self.config.max_parallel.min(jobs.len()).max(1);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| {
                    let mut session = client.session();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some((id, site, url)) = jobs.get(i) else { break };
                        log::debug!("crawling {id}");
                        let r = session.crawl(site, url, targets);
                        results.lock().expect("results lock")[i] = Some(r);
                    }
                });
            }
        });

        let mut captures = Vec::new();
        let mut skips = Vec::new();
        let mut outcome = RunOutcome::default();
        let results = results.into_inner().expect("results lock");
        for ((id, _, url), result) in jobs.iter().zip(results) {
            for (target, r) in result.unwrap_or_default() {
                match r {
                    Ok(capture) => {
                        let digest = write_body(&bodies, capture.body.as_bytes())?;
                        captures.push(capture_record(
                            id,
                            url,
                            &capture.target,
                            &capture.memento,
                            capture.fetch_status,
                            digest,
                        ));
                        outcome.captures += 1;
                    }
                    Err(reason) => {
                        if matches!(reason, SkipReason::TransportFailed { .. }) {
                            outcome.transport_failures += 1;
                        }
                        outcome.skips += 1;
                        skips.push(SkipRecord { id: id.clone(), year: target.year, quarter: target.quarter, reason });
                    }
                }
            }
        }
        Ok((captures, skips, outcome))
    }

    fn crawl_sites(&self) -> Result<RunOutcome, PipelineError> {
        let sites = load_sites(&self.config)?;
        let targets = schedule(self.config.from_year, self.config.to_year, self.config.interval_months)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let jobs: Vec<_> = sites.iter().map(|s| (s.site.to_string(), s.site.clone(), s.url.clone())).collect();
        let (captures, skips, outcome) = self.crawl_jobs(&jobs, &targets)?;
        write_jsonl(&self.layout.crawl().join("page_captures.jsonl"), &captures)?;
        write_jsonl(&self.layout.crawl().join("page_skips.jsonl"), &skips)?;
        log::info!("sites: {} captures, {} skipped intervals", outcome.captures, outcome.skips);
        Ok(outcome)
    }

    fn crawl_lists(&self) -> Result<RunOutcome, PipelineError> {
        let from = self.config.list_from_year.unwrap_or(self.config.from_year);
        let targets = schedule(from, self.config.to_year, self.config.interval_months)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let table = self.config.suffix_table();
        let mut jobs = Vec::new();
        let mut local = Vec::new();
        for (id, source) in &self.config.blacklists {
            if let Some(url) = &source.url {
                let host = url_registrable_domain(url, table, self.config.psl_mode)
                    .map_err(|e| PipelineError::Config(format!("blacklist {id}: {e}")))?;
                jobs.push((id.clone(), host, url.clone()));
            } else if let Some(path) = &source.path {
                local.extend(self.local_list_captures(id, path, source.date)?);
            }
        }
        let (mut captures, skips, mut outcome) = self.crawl_jobs(&jobs, &targets)?;
        outcome.captures += local.len();
        captures.extend(local);
        captures.sort_by(|a, b| (&a.id, a.memento_timestamp).cmp(&(&b.id, b.memento_timestamp)));
        write_jsonl(&self.layout.crawl().join("list_captures.jsonl"), &captures)?;
        write_jsonl(&self.layout.crawl().join("list_skips.jsonl"), &skips)?;
        log::info!("lists: {} captures, {} skipped intervals", outcome.captures, outcome.skips);
        Ok(outcome)
    }

    fn local_list_captures(
        &self,
        id: &str,
        path: &Path,
        date: Option<NaiveDate>,
    ) -> Result<Vec<CaptureRecord>, PipelineError> {
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in fs::read_dir(path)? {
                let p = entry?.path();
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                if let Ok(d) = NaiveDate::parse_from_str(stem, "%Y-%m-%d") {
                    files.push((d, p));
                }
            }
        } else {
            let d = date.ok_or_else(|| PipelineError::Config(format!("blacklist {id}: a single file needs a date")))?;
            files.push((d, path.to_path_buf()));
        }
        files.sort();
        let bodies = self.layout.bodies();
        fs::create_dir_all(&bodies)?;
        let mut out = Vec::new();
        for (d, p) in files {
            let body = fs::read(&p)?;
            let digest = write_body(&bodies, &body)?;
            let ts = Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight"));
            let quarter = ((d.month0() / u32::from(self.config.interval_months)) + 1) as u8;
            out.push(CaptureRecord {
                id: id.to_string(),
                original_url: format!("file://{}", p.display()),
                year: d.year(),
                quarter,
                memento_url: format!("file://{}", p.display()),
                memento_timestamp: ts,
                delta_days: 0,
                over_gap: false,
                fetch_status: 200,
                body_digest: digest,
            });
        }
        Ok(out)
    }

    fn read_captures(&self, file: &str, stage: &'static str) -> Result<Vec<CaptureRecord>, PipelineError> {
        let path = self.layout.crawl().join(file);
        if !path.exists() {
            return Err(PipelineError::MissingStage { missing: stage });
        }
        read_jsonl(&path)
    }

    fn body(&self, digest: &str) -> Result<String, PipelineError> {
        let bytes = fs::read(self.layout.bodies().join(digest))?;
        Ok(crate::archive::decode_body(&bytes))
    }

    fn extract(&self) -> Result<(), PipelineError> {
        let pages = self.read_captures("page_captures.jsonl", "crawl-sites")?;
        let lists = self.read_captures("list_captures.jsonl", "crawl-lists")?;
        let table = self.config.suffix_table();
        let mode = self.config.psl_mode;
        let countries: BTreeMap<String, BTreeSet<String>> =
            load_sites(&self.config)?.into_iter().map(|s| (s.site.to_string(), s.countries)).collect();
        let mut store = Store::open(self.layout.store())?;

        for c in &pages {
            let Some(tags) = countries.get(&c.id) else {
                log::warn!("{} is no longer in any site list; skipped", c.id);
                continue;
            };
            let site = registrable_domain(&c.id, table, mode)
                .map_err(|e| PipelineError::Config(format!("capture of {}: {e}", c.id)))?;
            let capture = PageCapture {
                site,
                target: TargetDate::new(c.year, c.quarter, self.config.interval_months),
                memento: MementoRef {
                    original_url: c.original_url.clone(),
                    memento_url: c.memento_url.clone(),
                    memento_timestamp: c.memento_timestamp,
                    delta_days: c.delta_days,
                    over_gap: c.over_gap,
                },
                body: self.body(&c.body_digest)?,
                fetch_status: c.fetch_status,
            };
            let obs = observe_page(&capture, table, mode);
            let mut rec = ObservationRecord::from_observation(&obs, tags.iter().cloned().collect());
            rec.memento_url = c.memento_url.clone();
            rec.delta_days = c.delta_days;
            rec.over_gap = c.over_gap;
            store.put_observation(rec)?;
        }

        for c in &lists {
            let hint = self.config.blacklists.get(&c.id).and_then(|s| s.format);
            let text = self.body(&c.body_digest)?;
            let snapshot = BlacklistSnapshot::parse(&c.id, c.memento_timestamp.date_naive(), &text, hint, table, mode);
            store.put_list_snapshot(ListRecord::from(&snapshot))?;
        }
        Ok(())
    }

    fn open_store(&self) -> Result<Store, PipelineError> {
        let dir = self.layout.store();
        if !dir.join(OBSERVATIONS_FILE).exists() || !dir.join(LISTS_FILE).exists() {
            return Err(PipelineError::MissingStage { missing: "extract" });
        }
        Ok(Store::open(dir)?)
    }

    fn match_detections(&self) -> Result<(), PipelineError> {
        let store = self.open_store()?;
        let view = store.view(self.config.from_year..=self.config.to_year);
        let mut all = Vec::new();
        for list in store.list_ids() {
            let selector = ListSelector::Single(list);
            let timeline = store.timeline(&selector)?;
            for year in view.years() {
                all.extend(view.detections_with(&timeline, year, &selector, &SiteScope::All, self.config.first_seen));
            }
        }
        store::write_detections(&self.layout.store().join(DETECTIONS_FILE), &all)?;
        log::info!("{} detections, {} sites discarded", all.len(), view.discarded_sites().len());
        Ok(())
    }

    fn metrics(&self) -> Result<(), PipelineError> {
        if !self.layout.store().join(DETECTIONS_FILE).exists() {
            return Err(PipelineError::MissingStage { missing: "match" });
        }
        let store = self.open_store()?;
        let view = store.view(self.config.from_year..=self.config.to_year);
        let opts = AnalysisOptions { first_seen: self.config.first_seen, ..AnalysisOptions::default() };
        let analysis = analyze(&view, opts)?;
        report::write_tables(&analysis, &self.layout.metrics())?;
        Ok(())
    }

    fn report(&self) -> Result<(), PipelineError> {
        let src = self.layout.metrics();
        let dst = self.layout.reports();
        for kind in ReportKind::ALL {
            if !src.join(kind.csv_file()).exists() {
                return Err(PipelineError::MissingStage { missing: "metrics" });
            }
        }
        fs::create_dir_all(&dst)?;
        for kind in ReportKind::ALL {
            let from = src.join(kind.csv_file());
            report::check_header(&from, kind)?;
            fs::copy(&from, dst.join(kind.csv_file()))?;
            report::write_schema(&dst, kind)?;
        }
        Ok(())
    }
}

fn capture_record(
    id: &str,
    url: &str,
    target: &TargetDate,
    m: &MementoRef,
    status: u16,
    digest: String,
) -> CaptureRecord {
    CaptureRecord {
        id: id.to_string(),
        original_url: url.to_string(),
        year: target.year,
        quarter: target.quarter,
        memento_url: m.memento_url.clone(),
        memento_timestamp: m.memento_timestamp,
        delta_days: m.delta_days,
        over_gap: m.over_gap,
        fetch_status: status,
        body_digest: digest,
    }
}

fn write_body(dir: &Path, body: &[u8]) -> io::Result<String> {
    let digest = body_digest(body);
    let path = dir.join(&digest);
    if !path.exists() {
        fs::write(path, body)?;
    }
    Ok(digest)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
        }
    }
    Ok(out)
}

/// Generates a scenario corpus under `out`: store records in `corpus/`,
/// expected churn in `expected_churn.csv`, and a replayable archive with a
/// `run.toml` that runs the full pipeline offline. Returns that config path.
pub fn simulate(spec: &ScenarioSpec, out: &Path) -> Result<PathBuf, PipelineError> {
    let corpus = generate_corpus(spec).map_err(|e| PipelineError::Config(e.to_string()))?;
    let corpus_dir = out.join("corpus");
    if corpus_dir.exists() {
        fs::remove_dir_all(&corpus_dir)?;
    }
    let mut store = Store::open(&corpus_dir)?;
    for o in &corpus.observations {
        store.put_observation(o.clone())?;
    }
    for l in &corpus.lists {
        store.put_list_snapshot(l.clone())?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out.join("expected_churn.csv"))
        .map_err(|e| PipelineError::Io(io::Error::other(e)))?;
    let csv_err = |e: csv::Error| PipelineError::Io(io::Error::other(e));
    w.write_record(["entity_kind", "entity", "year", "stability", "diversity"]).map_err(csv_err)?;
    for r in &corpus.expected {
        w.write_record([
            "global".to_string(),
            "global".to_string(),
            r.year.to_string(),
            r.stability.to_string(),
            r.diversity.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    let config = render_archive(&corpus, out)?;
    Ok(config)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}
