//! Dated snapshots from a Memento-compatible web archive.
//!
//! Pages and blacklist files are captured once per scheduling interval
//! (quarterly by default). For each interval the client ranks the archive's
//! mementos inside the interval by distance to the interval start and tries
//! them in order: archive-level redirects are discarded and the next memento
//! is tried, up to [`RetryPolicy::max_tries_per_interval`] attempts, after
//! which the interval is skipped.

mod cache;
mod http;
mod timemap;

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Datelike, Months, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

pub use cache::{body_digest, CachedArchive, ResponseCache};
pub use http::HttpArchive;
pub use timemap::{parse_link_timemap, TimemapEntry};

use crate::domain::RegistrableDomain;

/// Resolutions further than this from the requested date are flagged.
pub const OVER_GAP_DAYS: i64 = 183;

/// One scheduling interval. With the default three-month interval `quarter`
/// is the calendar quarter; in general it is the 1-based interval index
/// within the year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetDate {
    pub year: i32,
    pub quarter: u8,
    pub interval_months: u8,
    pub nominal_date: NaiveDate,
}

impl TargetDate {
    /// Panics if the interval does not divide the year or `quarter` is out of range.
    pub fn new(year: i32, quarter: u8, interval_months: u8) -> Self {
        assert!(valid_interval(interval_months), "interval must divide 12 months");
        assert!(quarter >= 1 && u32::from(quarter) * u32::from(interval_months) <= 12);
        let month = u32::from(quarter - 1) * u32::from(interval_months) + 1;
        let nominal_date = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month start");
        TargetDate { year, quarter, interval_months, nominal_date }
    }

    /// First day after the interval.
    pub fn interval_end(&self) -> NaiveDate {
        self.nominal_date + Months::new(u32::from(self.interval_months))
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        let d = ts.date_naive();
        d >= self.nominal_date && d < self.interval_end()
    }

    pub fn nominal_datetime(&self) -> DateTime<Utc> {
        Utc.from_utc_datetime(&self.nominal_date.and_hms_opt(0, 0, 0).expect("midnight"))
    }
}

impl fmt::Display for TargetDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.interval_months == 3 {
            write!(f, "{}-Q{}", self.year, self.quarter)
        } else {
            write!(f, "{}-P{}", self.year, self.quarter)
        }
    }
}

fn valid_interval(months: u8) -> bool {
    matches!(months, 1 | 2 | 3 | 4 | 6 | 12)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("inverted year range {from}..{to}")]
    InvertedRange { from: i32, to: i32 },
    #[error("interval of {0} months does not divide the year")]
    BadInterval(u8),
}

/// Quarterly targets for every year in `from_year..=to_year`.
pub fn schedule_quarters(from_year: i32, to_year: i32) -> Result<Vec<TargetDate>, ScheduleError> {
    schedule(from_year, to_year, 3)
}

/// Targets at `interval_months` spacing, chronologically ordered.
pub fn schedule(from_year: i32, to_year: i32, interval_months: u8) -> Result<Vec<TargetDate>, ScheduleError> {
    if from_year > to_year {
        return Err(ScheduleError::InvertedRange { from: from_year, to: to_year });
    }
    if !valid_interval(interval_months) {
        return Err(ScheduleError::BadInterval(interval_months));
    }
    let per_year = 12 / interval_months;
    Ok((from_year..=to_year)
        .flat_map(|y| (1..=per_year).map(move |q| TargetDate::new(y, q, interval_months)))
        .collect())
}

/// A resolved archive capture of `original_url`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MementoRef {
    pub original_url: String,
    pub memento_url: String,
    pub memento_timestamp: DateTime<Utc>,
    /// Whole days from the requested date to the capture (negative = earlier).
    pub delta_days: i64,
    /// True when `|delta_days|` exceeds [`OVER_GAP_DAYS`].
    pub over_gap: bool,
}

impl MementoRef {
    fn new(original_url: &str, entry: &TimemapEntry, target: &TargetDate) -> Self {
        let delta = entry.timestamp - target.nominal_datetime();
        let delta_days = delta.num_days();
        MementoRef {
            original_url: original_url.to_string(),
            memento_url: entry.uri.clone(),
            memento_timestamp: entry.timestamp,
            delta_days,
            over_gap: delta_days.abs() > OVER_GAP_DAYS,
        }
    }

    fn distance(&self, target: &TargetDate) -> Duration {
        (self.memento_timestamp - target.nominal_datetime()).abs().to_std().unwrap_or_default()
    }
}

/// Timestamp encoded in an archive path: `/web/20110328123456/...`.
/// Shorter digit runs are padded (`/web/2011/` is 2011-01-01 00:00:00).
pub fn timestamp_from_archive_url(url: &str) -> Option<DateTime<Utc>> {
    let start = url.find("/web/")? + 5;
    let digits: String = url[start..].chars().take_while(char::is_ascii_digit).take(14).collect();
    if digits.len() < 4 {
        return None;
    }
    let mut padded = digits;
    const DEFAULTS: &str = "00000101000000";
    while padded.len() < 14 {
        padded.push(DEFAULTS.as_bytes()[padded.len()] as char);
    }
    NaiveDateTime::parse_from_str(&padded, "%Y%m%d%H%M%S").ok().map(|dt| Utc.from_utc_datetime(&dt))
}

/// Undoes an archive's URL rewriting:
/// `https://web.archive.org/web/20110101000000js_/http://x/a.js` -> `http://x/a.js`.
///
/// Accepts absolute, scheme-relative and host-relative rewrite forms; any
/// other input is returned unchanged.
pub fn strip_archive_rewrite(url: &str) -> String {
    let Some(web) = url.find("/web/") else {
        return url.to_string();
    };
    let prefix = &url[..web];
    let prefix_ok = prefix.is_empty()
        || ((prefix.starts_with("http://") || prefix.starts_with("https://") || prefix.starts_with("//"))
            && !prefix.trim_start_matches("https:").trim_start_matches("http:")[2..].contains('/'));
    if !prefix_ok {
        return url.to_string();
    }
    let rest = &url[web + 5..];
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return url.to_string();
    }
    let after_ts = &rest[digits..];
    // Optional modifier such as `js_`, `im_`, `id_`, `if_`.
    let modifier = after_ts.bytes().take_while(|b| b.is_ascii_alphabetic() || *b == b'_').count();
    let Some(original) = after_ts[modifier..].strip_prefix('/') else {
        return url.to_string();
    };
    // Some archives collapse `http://` to `http:/`.
    for scheme in ["http:/", "https:/"] {
        if let Some(tail) = original.strip_prefix(scheme) {
            if !tail.starts_with('/') {
                return format!("{scheme}/{tail}");
            }
        }
    }
    original.to_string()
}

/// What a single HTTP exchange with the archive produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveResponse {
    pub status: u16,
    pub location: Option<String>,
    pub body: Vec<u8>,
}

impl ArchiveResponse {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        ArchiveResponse { status: 200, location: None, body: body.into() }
    }

    pub fn redirect(status: u16, location: &str) -> Self {
        ArchiveResponse { status, location: Some(location.to_string()), body: Vec::new() }
    }

    pub fn is_redirect(&self) -> bool {
        (300..400).contains(&self.status)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive has no capture of {0}")]
    NoMemento(String),
    #[error("archive unreachable: {0}")]
    ArchiveUnreachable(String),
}

/// Transport to an archive. Implementations must not follow redirects.
pub trait Archive: Send + Sync {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError>;

    /// Whether `url` can be answered without touching the network; such
    /// requests are not paced.
    fn is_local(&self, _url: &str) -> bool {
        false
    }
}

impl<A: Archive + ?Sized> Archive for &A {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        (**self).get(url)
    }

    fn is_local(&self, url: &str) -> bool {
        (**self).is_local(url)
    }
}

impl<A: Archive + ?Sized> Archive for Box<A> {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        (**self).get(url)
    }

    fn is_local(&self, url: &str) -> bool {
        (**self).is_local(url)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RedirectAction {
    /// Drop the redirected memento and try another from the same interval.
    #[default]
    DiscardAndRetry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_tries_per_interval: u32,
    pub redirect_action: RedirectAction,
    /// Minimum gap between two network requests from one worker.
    pub politeness_delay: Duration,
    pub max_parallel: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_tries_per_interval: 4,
            redirect_action: RedirectAction::DiscardAndRetry,
            politeness_delay: Duration::from_millis(1000),
            max_parallel: 4,
        }
    }
}

/// A successfully fetched page (or blacklist file) snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageCapture {
    pub site: RegistrableDomain,
    pub target: TargetDate,
    pub memento: MementoRef,
    pub body: String,
    pub fetch_status: u16,
}

/// Why an interval produced no capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum SkipReason {
    /// Every attempt redirected or failed, up to the per-interval try limit.
    IntervalExhausted {
        tries: u32,
    },
    NoMemento,
    TransportFailed {
        message: String,
    },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::IntervalExhausted { tries } => write!(f, "interval-exhausted after {tries} tries"),
            SkipReason::NoMemento => f.write_str("no-memento"),
            SkipReason::TransportFailed { message } => write!(f, "transport-failed: {message}"),
        }
    }
}

/// Enforces a minimum gap between consecutive requests.
#[derive(Debug)]
pub struct Pacer {
    delay: Duration,
    last: Option<Instant>,
}

impl Pacer {
    pub fn new(delay: Duration) -> Self {
        Pacer { delay, last: None }
    }

    pub fn wait(&mut self) {
        if let Some(last) = self.last {
            let elapsed = last.elapsed();
            if elapsed < self.delay {
                thread::sleep(self.delay - elapsed);
            }
        }
        self.last = Some(Instant::now());
    }
}

/// Decodes a fetched body: UTF-8 when valid, Latin-1 otherwise.
pub fn decode_body(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

/// Memento protocol client over an [`Archive`] transport.
pub struct MementoClient<A> {
    archive: A,
    base_url: String,
    policy: RetryPolicy,
}

impl<A: Archive> MementoClient<A> {
    pub fn new(archive: A, base_url: &str, policy: RetryPolicy) -> Self {
        MementoClient { archive, base_url: base_url.trim_end_matches('/').to_string(), policy }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn archive(&self) -> &A {
        &self.archive
    }

    pub fn timemap_url(&self, original_url: &str) -> String {
        format!("{}/web/timemap/link/{}", self.base_url, original_url)
    }

    pub fn memento_url(&self, original_url: &str, ts: &DateTime<Utc>) -> String {
        format!("{}/web/{}/{}", self.base_url, ts.format("%Y%m%d%H%M%S"), original_url)
    }

    /// A per-worker session with its own pacing state.
    pub fn session(&self) -> Session<'_, A> {
        Session { client: self, pacer: Pacer::new(self.policy.politeness_delay), requests: 0 }
    }
}

pub struct Session<'c, A> {
    client: &'c MementoClient<A>,
    pacer: Pacer,
    requests: u64,
}

impl<A: Archive> Session<'_, A> {
    /// Requests made through this session, local or not.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    fn get(&mut self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        if !self.client.archive.is_local(url) {
            self.pacer.wait();
        }
        self.requests += 1;
        self.client.archive.get(url)
    }

    /// All captures of `original_url`, oldest first.
    pub fn timemap(&mut self, original_url: &str) -> Result<Vec<TimemapEntry>, ArchiveError> {
        let url = self.client.timemap_url(original_url);
        let resp = self.get(&url)?;
        match resp.status {
            200..=299 => {}
            404 => return Err(ArchiveError::NoMemento(original_url.to_string())),
            s => return Err(ArchiveError::ArchiveUnreachable(format!("timemap status {s} for {url}"))),
        }
        let mut entries = parse_link_timemap(&decode_body(&resp.body));
        entries.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.uri.cmp(&b.uri)));
        entries.dedup_by(|a, b| a.uri == b.uri);
        if entries.is_empty() {
            return Err(ArchiveError::NoMemento(original_url.to_string()));
        }
        Ok(entries)
    }

    /// Timemap fetch retried on transport failures, up to the try limit.
    fn timemap_with_retries(&mut self, original_url: &str) -> Result<Vec<TimemapEntry>, ArchiveError> {
        let mut last = None;
        for _ in 0..self.client.policy.max_tries_per_interval.max(1) {
            match self.timemap(original_url) {
                Err(ArchiveError::ArchiveUnreachable(m)) => last = Some(m),
                other => return other,
            }
        }
        Err(ArchiveError::ArchiveUnreachable(last.unwrap_or_default()))
    }

    /// The capture nearest to the target's nominal date.
    pub fn resolve_memento(&mut self, original_url: &str, target: &TargetDate) -> Result<MementoRef, ArchiveError> {
        let entries = self.timemap(original_url)?;
        nearest_memento(original_url, &entries, target).ok_or_else(|| ArchiveError::NoMemento(original_url.to_string()))
    }

    /// Fetches the first usable memento among `candidates` (already ranked).
    ///
    /// Redirects and non-success statuses consume a try and move on to the
    /// next candidate. Never returns more than `max_tries_per_interval`
    /// requests' worth of attempts.
    pub fn fetch_snapshot(
        &mut self,
        site: &RegistrableDomain,
        target: &TargetDate,
        candidates: &[MementoRef],
    ) -> Result<PageCapture, SkipReason> {
        if candidates.is_empty() {
            return Err(SkipReason::NoMemento);
        }
        let max_tries = self.client.policy.max_tries_per_interval.max(1);
        let mut tries = 0u32;
        let mut transport_errors = Vec::new();
        for candidate in candidates.iter().take(max_tries as usize) {
            tries += 1;
            match self.get(&candidate.memento_url) {
                Ok(resp) if resp.is_success() && !resp.body.is_empty() => {
                    return Ok(PageCapture {
                        site: site.clone(),
                        target: *target,
                        memento: candidate.clone(),
                        body: decode_body(&resp.body),
                        fetch_status: resp.status,
                    });
                }
                Ok(resp) => {
                    log::debug!(
                        "discarding {} (status {}{})",
                        candidate.memento_url,
                        resp.status,
                        resp.location.as_deref().map(|l| format!(" -> {l}")).unwrap_or_default()
                    );
                }
                Err(e) => transport_errors.push(e.to_string()),
            }
        }
        if transport_errors.len() as u32 == tries {
            return Err(SkipReason::TransportFailed { message: transport_errors.pop().unwrap_or_default() });
        }
        Err(SkipReason::IntervalExhausted { tries })
    }

    /// Captures `original_url` once per target.
    pub fn crawl(
        &mut self,
        site: &RegistrableDomain,
        original_url: &str,
        targets: &[TargetDate],
    ) -> Vec<(TargetDate, Result<PageCapture, SkipReason>)> {
        let entries = match self.timemap_with_retries(original_url) {
            Ok(entries) => entries,
            Err(err) => {
                let reason = match err {
                    ArchiveError::NoMemento(_) => SkipReason::NoMemento,
                    ArchiveError::ArchiveUnreachable(message) => SkipReason::TransportFailed { message },
                };
                return targets.iter().map(|t| (*t, Err(reason.clone()))).collect();
            }
        };
        targets
            .iter()
            .map(|t| {
                let candidates = interval_candidates(original_url, &entries, t);
                (*t, self.fetch_snapshot(site, t, &candidates))
            })
            .collect()
    }
}

/// The entry closest to the nominal date; ties go to the earlier capture.
pub fn nearest_memento(original_url: &str, entries: &[TimemapEntry], target: &TargetDate) -> Option<MementoRef> {
    entries.iter().map(|e| MementoRef::new(original_url, e, target)).min_by(|a, b| {
        a.distance(target).cmp(&b.distance(target)).then_with(|| a.memento_timestamp.cmp(&b.memento_timestamp))
    })
}

/// Captures inside the target interval, nearest to its start first.
pub fn interval_candidates(original_url: &str, entries: &[TimemapEntry], target: &TargetDate) -> Vec<MementoRef> {
    let mut refs: Vec<MementoRef> = entries
        .iter()
        .filter(|e| target.contains(&e.timestamp))
        .map(|e| MementoRef::new(original_url, e, target))
        .collect();
    refs.sort_by(|a, b| {
        a.distance(target).cmp(&b.distance(target)).then_with(|| a.memento_timestamp.cmp(&b.memento_timestamp))
    });
    refs
}

/// Calendar year of a capture.
pub fn capture_year(ts: &DateTime<Utc>) -> i32 {
    ts.year()
}
