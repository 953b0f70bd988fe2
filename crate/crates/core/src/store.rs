//! Timeline store: page observations, blacklist snapshots and the detection
//! records derived from them.
//!
//! Records live in append-only JSON-lines files, one per record kind, and are
//! indexed in memory on load. Puts are idempotent upserts keyed on each
//! record's uniqueness tuple.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::blacklist::{BlacklistSnapshot, FormatKind, ParseDiagnostics};
use crate::page::PageObservation;

pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const LISTS_FILE: &str = "lists.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";

/// List id standing for the union of every registered list.
pub const UNION_LIST: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub site: String,
    pub country_tags: Vec<String>,
    pub year: i32,
    pub quarter: u8,
    pub memento_timestamp: DateTime<Utc>,
    pub domains: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub memento_url: String,
    #[serde(default)]
    pub delta_days: i64,
    #[serde(default)]
    pub over_gap: bool,
}

impl ObservationRecord {
    pub fn from_observation(obs: &PageObservation, country_tags: Vec<String>) -> Self {
        ObservationRecord {
            site: obs.site.to_string(),
            country_tags,
            year: obs.year,
            quarter: obs.quarter,
            memento_timestamp: obs.memento_timestamp,
            domains: obs.third_party_domains.iter().map(|d| d.to_string()).collect(),
            memento_url: String::new(),
            delta_days: 0,
            over_gap: false,
        }
    }

    pub fn key(&self) -> (String, i32, u8) {
        (self.site.clone(), self.year, self.quarter)
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.site.is_empty() {
            return Err(StoreError::InvalidRecord("observation with empty site".into()));
        }
        if self.country_tags.is_empty() {
            return Err(StoreError::InvalidRecord(format!("observation of {} has no country tags", self.site)));
        }
        if self.quarter == 0 {
            return Err(StoreError::InvalidRecord(format!("observation of {} has quarter 0", self.site)));
        }
        Ok(())
    }

    pub fn capture_date(&self) -> NaiveDate {
        self.memento_timestamp.date_naive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListRecord {
    pub list_id: String,
    pub capture_date: NaiveDate,
    pub domains: BTreeSet<String>,
    pub source_format: FormatKind,
    pub rule_count: usize,
    #[serde(default)]
    pub diagnostics: ParseDiagnostics,
}

impl ListRecord {
    pub fn key(&self) -> (String, NaiveDate) {
        (self.list_id.clone(), self.capture_date)
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.list_id.is_empty() || self.list_id == UNION_LIST {
            return Err(StoreError::InvalidRecord(format!("invalid list id {:?}", self.list_id)));
        }
        Ok(())
    }
}

impl From<&BlacklistSnapshot> for ListRecord {
    fn from(s: &BlacklistSnapshot) -> Self {
        ListRecord {
            list_id: s.list_id.clone(),
            capture_date: s.capture_date,
            domains: s.domains.iter().map(|d| d.to_string()).collect(),
            source_format: s.source_format,
            rule_count: s.rule_count,
            diagnostics: s.diagnostics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub domain: String,
    pub site: String,
    pub year: i32,
    pub web_first_seen: NaiveDate,
    pub list_id: String,
    pub list_first_seen: NaiveDate,
    /// Days from first web occurrence to listing; positive is reactive.
    pub time_difference_days: i64,
    /// The domain is in the list's first captured snapshot.
    pub first_snapshot: bool,
    /// Seen on the web before the list's first snapshot, so the true
    /// listing date is unknown.
    pub censored: bool,
}

impl DetectionRecord {
    pub fn is_reactive(&self) -> bool {
        self.time_difference_days > 0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("conflicting record for key {key}")]
    ConflictingRecord { key: String },
    #[error("unknown list {0}")]
    UnknownList(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    Unchanged,
}

/// Which list timeline detections are computed against.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ListSelector {
    Single(String),
    /// All lists merged into one timeline.
    Union,
}

impl ListSelector {
    pub fn id(&self) -> &str {
        match self {
            ListSelector::Single(id) => id,
            ListSelector::Union => UNION_LIST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteScope {
    All,
    Country(String),
}

/// How a domain's first web occurrence is dated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstSeenMode {
    /// Earliest capture within the analyzed year.
    #[default]
    YearLocal,
    /// Earliest capture in the whole analyzed range.
    Global,
}

/// When a domain first entered a list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ListFirstSeen {
    pub date: NaiveDate,
    pub first_snapshot: bool,
}

/// Per-list index from domain to first listing date.
#[derive(Debug, Clone, Default)]
pub struct ListTimeline {
    pub first_capture: Option<NaiveDate>,
    first_seen: HashMap<String, NaiveDate>,
}

impl ListTimeline {
    fn build<'a>(records: impl IntoIterator<Item = &'a ListRecord>) -> Self {
        let mut t = ListTimeline::default();
        for r in records {
            t.first_capture = Some(t.first_capture.map_or(r.capture_date, |d| d.min(r.capture_date)));
            for d in &r.domains {
                t.first_seen.entry(d.clone()).and_modify(|e| *e = (*e).min(r.capture_date)).or_insert(r.capture_date);
            }
        }
        t
    }

    pub fn first_seen(&self, domain: &str) -> Option<ListFirstSeen> {
        let date = *self.first_seen.get(domain)?;
        Some(ListFirstSeen { date, first_snapshot: Some(date) == self.first_capture })
    }

    pub fn contains(&self, domain: &str) -> bool {
        self.first_seen.contains_key(domain)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.first_seen.keys().map(String::as_str)
    }
}

/// Signed day difference and flags for one (site, domain) detection.
///
/// A domain in the list's first snapshot that was already on the web (or
/// appears the same day) gets 1 day rather than a non-positive value.
pub fn time_difference(web_first_seen: NaiveDate, listed: ListFirstSeen) -> (i64, bool) {
    let raw = (listed.date - web_first_seen).num_days();
    let censored = listed.first_snapshot && web_first_seen < listed.date;
    if listed.first_snapshot && raw >= 0 {
        (1, censored)
    } else {
        (raw, censored)
    }
}

#[derive(Debug, Default)]
pub struct Store {
    dir: Option<PathBuf>,
    observations: BTreeMap<(String, i32, u8), ObservationRecord>,
    lists: BTreeMap<(String, NaiveDate), ListRecord>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store::default()
    }

    /// Opens a store directory, loading existing record files.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut store = Store { dir: None, ..Store::default() };
        for rec in read_jsonl::<ObservationRecord>(&dir.join(OBSERVATIONS_FILE))? {
            store.put_observation(rec)?;
        }
        for rec in read_jsonl::<ListRecord>(&dir.join(LISTS_FILE))? {
            store.put_list_snapshot(rec)?;
        }
        store.dir = Some(dir);
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn append<T: Serialize>(&self, file: &str, rec: &T) -> Result<(), StoreError> {
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(file))?;
            let line = serde_json::to_string(rec).map_err(io::Error::other)?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn put_observation(&mut self, rec: ObservationRecord) -> Result<PutOutcome, StoreError> {
        rec.validate()?;
        let key = rec.key();
        if let Some(existing) = self.observations.get(&key) {
            if *existing == rec {
                return Ok(PutOutcome::Unchanged);
            }
            return Err(StoreError::ConflictingRecord { key: format!("{}/{}/Q{}", key.0, key.1, key.2) });
        }
        self.append(OBSERVATIONS_FILE, &rec)?;
        self.observations.insert(key, rec);
        Ok(PutOutcome::Inserted)
    }

    pub fn put_list_snapshot(&mut self, rec: ListRecord) -> Result<PutOutcome, StoreError> {
        rec.validate()?;
        let key = rec.key();
        if let Some(existing) = self.lists.get(&key) {
            if *existing == rec {
                return Ok(PutOutcome::Unchanged);
            }
            return Err(StoreError::ConflictingRecord { key: format!("{}/{}", key.0, key.1) });
        }
        self.append(LISTS_FILE, &rec)?;
        self.lists.insert(key, rec);
        Ok(PutOutcome::Inserted)
    }

    pub fn observations(&self) -> impl Iterator<Item = &ObservationRecord> {
        self.observations.values()
    }

    pub fn list_snapshots(&self) -> impl Iterator<Item = &ListRecord> {
        self.lists.values()
    }

    pub fn list_ids(&self) -> BTreeSet<String> {
        self.lists.keys().map(|(id, _)| id.clone()).collect()
    }

    pub fn timeline(&self, selector: &ListSelector) -> Result<ListTimeline, StoreError> {
        match selector {
            ListSelector::Union => Ok(ListTimeline::build(self.lists.values())),
            ListSelector::Single(id) => {
                let records: Vec<&ListRecord> = self
                    .lists
                    .range((id.clone(), NaiveDate::MIN)..=(id.clone(), NaiveDate::MAX))
                    .map(|(_, r)| r)
                    .collect();
                if records.is_empty() {
                    return Err(StoreError::UnknownList(id.clone()));
                }
                Ok(ListTimeline::build(records))
            }
        }
    }

    /// Earliest capture date of `list_id` containing `domain`.
    pub fn list_first_seen(&self, domain: &str, list_id: &str) -> Result<Option<ListFirstSeen>, StoreError> {
        let selector =
            if list_id == UNION_LIST { ListSelector::Union } else { ListSelector::Single(list_id.to_string()) };
        Ok(self.timeline(&selector)?.first_seen(domain))
    }

    /// An analysis view over `years` with the website discard rule applied.
    pub fn view(&self, years: RangeInclusive<i32>) -> StoreView<'_> {
        let mut years_by_site: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
        for rec in self.observations.values() {
            if years.contains(&rec.year) {
                years_by_site.entry(rec.site.as_str()).or_default().insert(rec.year);
            }
        }
        let n_years = years.clone().count();
        let mut retained = BTreeSet::new();
        let mut discarded = BTreeSet::new();
        for (site, ys) in years_by_site {
            if ys.len() == n_years {
                retained.insert(site.to_string());
            } else {
                discarded.insert(site.to_string());
            }
        }
        StoreView { store: self, years, retained, discarded }
    }
}

/// Read-only view of the store restricted to a year range and to sites with
/// at least one capture in every year of it.
pub struct StoreView<'s> {
    store: &'s Store,
    years: RangeInclusive<i32>,
    retained: BTreeSet<String>,
    discarded: BTreeSet<String>,
}

impl<'s> StoreView<'s> {
    pub fn store(&self) -> &'s Store {
        self.store
    }

    pub fn years(&self) -> RangeInclusive<i32> {
        self.years.clone()
    }

    pub fn retained_sites(&self) -> &BTreeSet<String> {
        &self.retained
    }

    pub fn discarded_sites(&self) -> &BTreeSet<String> {
        &self.discarded
    }

    fn in_view(&self, rec: &ObservationRecord) -> bool {
        self.years.contains(&rec.year) && self.retained.contains(&rec.site)
    }

    fn in_scope(rec: &ObservationRecord, scope: &SiteScope) -> bool {
        match scope {
            SiteScope::All => true,
            SiteScope::Country(c) => rec.country_tags.iter().any(|t| t == c),
        }
    }

    /// Retained observations within scope, ordered by (site, year, quarter).
    pub fn observations<'a>(&'a self, scope: &'a SiteScope) -> impl Iterator<Item = &'s ObservationRecord> + 'a {
        self.store.observations.values().filter(move |r| self.in_view(r) && Self::in_scope(r, scope))
    }

    pub fn countries(&self) -> BTreeSet<String> {
        self.observations(&SiteScope::All).flat_map(|r| r.country_tags.iter().cloned()).collect()
    }

    pub fn sites(&self, scope: &SiteScope) -> BTreeSet<String> {
        self.observations(scope).map(|r| r.site.clone()).collect()
    }

    /// Per-site yearly third-party domain sets within scope.
    pub fn site_year_domains(&self, scope: &SiteScope) -> BTreeMap<String, BTreeMap<i32, BTreeSet<String>>> {
        let mut out: BTreeMap<String, BTreeMap<i32, BTreeSet<String>>> = BTreeMap::new();
        for rec in self.observations(scope) {
            out.entry(rec.site.clone()).or_default().entry(rec.year).or_default().extend(rec.domains.iter().cloned());
        }
        out
    }

    /// Detection records for `year`: one per (site, domain) pair where the
    /// domain was observed on the site that year and appears in any snapshot
    /// of the selected list. Sorted by (domain, site).
    pub fn build_detections(
        &self,
        year: i32,
        list: &ListSelector,
        scope: &SiteScope,
        mode: FirstSeenMode,
    ) -> Result<Vec<DetectionRecord>, StoreError> {
        let timeline = self.store.timeline(list)?;
        Ok(self.detections_with(&timeline, year, list, scope, mode))
    }

    /// As [`build_detections`](Self::build_detections) with a prebuilt timeline.
    pub fn detections_with(
        &self,
        timeline: &ListTimeline,
        year: i32,
        list: &ListSelector,
        scope: &SiteScope,
        mode: FirstSeenMode,
    ) -> Vec<DetectionRecord> {
        // (site, domain) -> (seen in `year`, first date under `mode`)
        let mut first: BTreeMap<(&str, &str), (bool, NaiveDate)> = BTreeMap::new();
        for rec in self.observations(scope) {
            let counts = match mode {
                FirstSeenMode::YearLocal => rec.year == year,
                FirstSeenMode::Global => true,
            };
            if !counts {
                continue;
            }
            let date = rec.capture_date();
            for d in &rec.domains {
                if !timeline.contains(d) {
                    continue;
                }
                let e = first.entry((rec.site.as_str(), d.as_str())).or_insert((false, date));
                e.0 |= rec.year == year;
                e.1 = e.1.min(date);
            }
        }
        let mut out: Vec<DetectionRecord> = first
            .into_iter()
            .filter(|(_, (in_year, _))| *in_year)
            .filter_map(|((site, domain), (_, web_first_seen))| {
                let listed = timeline.first_seen(domain)?;
                let (td, censored) = time_difference(web_first_seen, listed);
                Some(DetectionRecord {
                    domain: domain.to_string(),
                    site: site.to_string(),
                    year,
                    web_first_seen,
                    list_id: list.id().to_string(),
                    list_first_seen: listed.date,
                    time_difference_days: td,
                    first_snapshot: listed.first_snapshot,
                    censored,
                })
            })
            .collect();
        out.sort();
        out
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Rewrites a derived detections file.
pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<(), StoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, StoreError> {
    read_jsonl(path)
}
