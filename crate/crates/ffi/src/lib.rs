//! C ABI over the listchurn primitives: registrable domains, blacklist
//! parsing, page script extraction and the churn set metrics.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Fallible calls return an
//! [`LcStatus`]; on failure [`lc_last_error`] describes the problem for the
//! calling thread. No call unwinds across the boundary.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::NaiveDate;
use listchurn::archive::{MementoRef, PageCapture, TargetDate};
use listchurn::blacklist::{BlacklistSnapshot, FormatKind};
use listchurn::metrics::{diversity, stability};
use listchurn::page::observe_page;
use listchurn::store::{time_difference, ListFirstSeen};
use listchurn::suffix::SuffixSections;
use listchurn::{registrable_domain, SldMode, SuffixTable};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidHost = 4,
    Io = 5,
    Panic = 6,
}

pub const LC_MODE_SUFFIX_AWARE: u32 = 0;
pub const LC_MODE_NAIVE: u32 = 1;

pub const LC_FORMAT_AUTO: u32 = 0;
pub const LC_FORMAT_HOSTS: u32 = 1;
pub const LC_FORMAT_FILTER_LIST: u32 = 2;
pub const LC_FORMAT_DOMAIN_LIST: u32 = 3;

enum Table {
    Bundled(&'static SuffixTable),
    Owned(SuffixTable),
}

/// A public suffix table.
pub struct LcSuffixTable(Table);

impl LcSuffixTable {
    fn get(&self) -> &SuffixTable {
        match &self.0 {
            Table::Bundled(t) => t,
            Table::Owned(t) => t,
        }
    }
}

/// A sorted set of domain strings.
#[derive(Default)]
pub struct LcDomainSet {
    items: Vec<CString>,
}

impl LcDomainSet {
    fn from_strings(items: impl IntoIterator<Item = String>) -> Self {
        let mut items: Vec<CString> = items.into_iter().filter_map(|s| CString::new(s).ok()).collect();
        items.sort();
        items.dedup();
        LcDomainSet { items }
    }

    fn set(&self) -> BTreeSet<&CStr> {
        self.items.iter().map(CString::as_c_str).collect()
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(LcStatus, String);

type CallResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> CallResult) -> LcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(LcStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> CallResult {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn mode(m: u32) -> Result<SldMode, Failure> {
    match m {
        LC_MODE_SUFFIX_AWARE => Ok(SldMode::SuffixAware),
        LC_MODE_NAIVE => Ok(SldMode::NaiveSld),
        other => Err(Failure(LcStatus::InvalidArgument, format!("unknown mode {other}"))),
    }
}

fn format_kind(f: u32) -> Result<Option<FormatKind>, Failure> {
    match f {
        LC_FORMAT_AUTO => Ok(None),
        LC_FORMAT_HOSTS => Ok(Some(FormatKind::Hosts)),
        LC_FORMAT_FILTER_LIST => Ok(Some(FormatKind::FilterList)),
        LC_FORMAT_DOMAIN_LIST => Ok(Some(FormatKind::DomainList)),
        other => Err(Failure(LcStatus::InvalidArgument, format!("unknown format {other}"))),
    }
}

fn format_code(f: FormatKind) -> u32 {
    match f {
        FormatKind::Hosts => LC_FORMAT_HOSTS,
        FormatKind::FilterList => LC_FORMAT_FILTER_LIST,
        FormatKind::DomainList => LC_FORMAT_DOMAIN_LIST,
        FormatKind::Unknown => LC_FORMAT_AUTO,
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent call on this thread if it failed, or NULL.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// The bundled suffix table, with or without the private section.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_suffix_table_bundled(include_private: bool, out: *mut *mut LcSuffixTable) -> LcStatus {
    guard(|| {
        let sections = if include_private { SuffixSections::All } else { SuffixSections::IcannOnly };
        let table = Box::new(LcSuffixTable(Table::Bundled(SuffixTable::bundled_with(sections))));
        write(out, Box::into_raw(table), "out")
    })
}

/// Loads a suffix table from a file in public-suffix format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_suffix_table_load(
    path: *const c_char,
    include_private: bool,
    out: *mut *mut LcSuffixTable,
) -> LcStatus {
    guard(|| {
        let path = text(path, "path")?;
        let sections = if include_private { SuffixSections::All } else { SuffixSections::IcannOnly };
        let table = SuffixTable::load(Path::new(path), sections).map_err(|e| Failure(LcStatus::Io, e.to_string()))?;
        write(out, Box::into_raw(Box::new(LcSuffixTable(Table::Owned(table)))), "out")
    })
}

/// # Safety
/// `table` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lc_suffix_table_free(table: *mut LcSuffixTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Registrable domain of `host`; the result is freed with [`lc_string_free`].
///
/// # Safety
/// Pointers must be valid; `host` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lc_registrable_domain(
    table: *const LcSuffixTable,
    host: *const c_char,
    mode_code: u32,
    out: *mut *mut c_char,
) -> LcStatus {
    guard(|| {
        let table = handle(table, "table")?;
        let host = text(host, "host")?;
        let mode = mode(mode_code)?;
        let d =
            registrable_domain(host, table.get(), mode).map_err(|e| Failure(LcStatus::InvalidHost, e.to_string()))?;
        let c = CString::new(d.into_string()).map_err(|e| Failure(LcStatus::InvalidHost, e.to_string()))?;
        write(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses blacklist text into its registrable domains. `format` is one of
/// the `LC_FORMAT_*` values; `out_format` (nullable) receives the format used.
///
/// # Safety
/// Pointers must be valid; `list_text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lc_blacklist_parse(
    table: *const LcSuffixTable,
    list_text: *const c_char,
    format: u32,
    mode_code: u32,
    out: *mut *mut LcDomainSet,
    out_format: *mut u32,
) -> LcStatus {
    guard(|| {
        let table = handle(table, "table")?;
        let body = text(list_text, "text")?;
        let hint = format_kind(format)?;
        let mode = mode(mode_code)?;
        let date = NaiveDate::default();
        let snap = BlacklistSnapshot::parse("ffi", date, body, hint, table.get(), mode);
        let set = LcDomainSet::from_strings(snap.domains.into_iter().map(|d| d.into_string()));
        if !out_format.is_null() {
            out_format.write(format_code(snap.source_format));
        }
        write(out, Box::into_raw(Box::new(set)), "out")
    })
}

/// Third-party registrable domains of the external scripts in `html`, a
/// page of `site_host`. `archive_url` (nullable) is the memento URL, whose
/// host is excluded as archive tooling.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lc_page_third_parties(
    table: *const LcSuffixTable,
    site_host: *const c_char,
    html: *const c_char,
    archive_url: *const c_char,
    mode_code: u32,
    out: *mut *mut LcDomainSet,
) -> LcStatus {
    guard(|| {
        let table = handle(table, "table")?;
        let mode = mode(mode_code)?;
        let site_host = text(site_host, "site_host")?;
        let html = text(html, "html")?;
        let memento_url = if archive_url.is_null() { "" } else { text(archive_url, "archive_url")? };
        let site = registrable_domain(site_host, table.get(), mode)
            .map_err(|e| Failure(LcStatus::InvalidHost, e.to_string()))?;
        let capture = PageCapture {
            site,
            target: TargetDate::new(2000, 1, 3),
            memento: MementoRef {
                original_url: format!("http://{site_host}/"),
                memento_url: memento_url.to_string(),
                memento_timestamp: Default::default(),
                delta_days: 0,
                over_gap: false,
            },
            body: html.to_string(),
            fetch_status: 200,
        };
        let obs = observe_page(&capture, table.get(), mode);
        let set = LcDomainSet::from_strings(obs.third_party_domains.into_iter().map(|d| d.into_string()));
        write(out, Box::into_raw(Box::new(set)), "out")
    })
}

/// An empty domain set.
#[no_mangle]
pub extern "C" fn lc_domain_set_new() -> *mut LcDomainSet {
    Box::into_raw(Box::default())
}

/// Adds `domain` verbatim. Pointers from [`lc_domain_set_get`] are
/// invalidated.
///
/// # Safety
/// `set` must be a valid handle and `domain` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lc_domain_set_insert(set: *mut LcDomainSet, domain: *const c_char) -> LcStatus {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        let domain = text(domain, "domain")?;
        let c = CString::new(domain).map_err(|e| Failure(LcStatus::InvalidArgument, e.to_string()))?;
        if let Err(i) = set.items.binary_search(&c) {
            set.items.insert(i, c);
        }
        Ok(())
    })
}

/// Number of domains; 0 for NULL.
///
/// # Safety
/// `set` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lc_domain_set_len(set: *const LcDomainSet) -> usize {
    set.as_ref().map_or(0, |s| s.items.len())
}

/// The `index`-th domain in ascending order, or NULL when out of range.
/// Owned by the set.
///
/// # Safety
/// `set` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lc_domain_set_get(set: *const LcDomainSet, index: usize) -> *const c_char {
    set.as_ref().and_then(|s| s.items.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `set` must be a valid handle, `domain` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn lc_domain_set_contains(
    set: *const LcDomainSet,
    domain: *const c_char,
    out: *mut bool,
) -> LcStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let domain = text(domain, "domain")?;
        let found = set.items.iter().any(|c| c.to_bytes() == domain.as_bytes());
        write(out, found, "out")
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lc_domain_set_free(set: *mut LcDomainSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Jaccard similarity of two yearly sets; 0 when both are empty.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_stability(
    current: *const LcDomainSet,
    previous: *const LcDomainSet,
    out: *mut f64,
) -> LcStatus {
    guard(|| {
        let (a, b) = (handle(current, "current")?, handle(previous, "previous")?);
        write(out, stability(&a.set(), &b.set()), "out")
    })
}

/// Share of `current` absent from `history`. An empty `current` gives 0
/// with `out_degenerate` (nullable) set.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_diversity(
    current: *const LcDomainSet,
    history: *const LcDomainSet,
    out: *mut f64,
    out_degenerate: *mut bool,
) -> LcStatus {
    guard(|| {
        let (a, b) = (handle(current, "current")?, handle(history, "history")?);
        let (value, degenerate) = diversity(&a.set(), &b.set());
        if !out_degenerate.is_null() {
            out_degenerate.write(degenerate);
        }
        write(out, value, "out")
    })
}

/// Signed days from first web sighting to first listing (`YYYY-MM-DD`
/// dates), with the first-snapshot rule applied. `out_censored` is nullable.
///
/// # Safety
/// Strings must be NUL-terminated and `out_days` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_time_difference(
    web_first_seen: *const c_char,
    list_first_seen: *const c_char,
    in_first_snapshot: bool,
    out_days: *mut i64,
    out_censored: *mut bool,
) -> LcStatus {
    guard(|| {
        let date = |p, what| -> Result<NaiveDate, Failure> {
            let s = text(p, what)?;
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|e| Failure(LcStatus::InvalidArgument, format!("{what} {s:?}: {e}")))
        };
        let web = date(web_first_seen, "web_first_seen")?;
        let listed = date(list_first_seen, "list_first_seen")?;
        let (days, censored) = time_difference(web, ListFirstSeen { date: listed, first_snapshot: in_first_snapshot });
        if !out_censored.is_null() {
            out_censored.write(censored);
        }
        write(out_days, days, "out_days")
    })
}
