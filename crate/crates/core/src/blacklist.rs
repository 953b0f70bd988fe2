//! Blacklist parsers.
//!
//! Three grammars are recognized: hosts files (`0.0.0.0 ads.example.com`),
//! Adblock-style filter lists (`||ads.example.com^`) and plain domain lists.
//! Every parser reduces what it finds to registrable domains; rule semantics
//! beyond "which domain does this rule block" are intentionally ignored.

use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{registrable_domain, DomainError, RegistrableDomain, SldMode};
use crate::suffix::SuffixTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatKind {
    Hosts,
    FilterList,
    DomainList,
    Unknown,
}

impl fmt::Display for FormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatKind::Hosts => "hosts",
            FormatKind::FilterList => "filter-list",
            FormatKind::DomainList => "domain-list",
            FormatKind::Unknown => "unknown",
        })
    }
}

impl FromStr for FormatKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hosts" => Ok(FormatKind::Hosts),
            "filter-list" | "filter" | "adblock" => Ok(FormatKind::FilterList),
            "domain-list" | "domains" => Ok(FormatKind::DomainList),
            "unknown" | "auto" => Ok(FormatKind::Unknown),
            other => Err(format!("unknown blacklist format {other:?}")),
        }
    }
}

/// Per-parse counters. Nothing is silently dropped: every rule line lands in
/// exactly one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Blocking entries seen (hostnames on hosts lines, network rules, `domain=` values).
    pub rules: usize,
    pub comments: usize,
    pub malformed: usize,
    /// `@@` exception rules (never contribute domains).
    pub exceptions: usize,
    /// Element-hiding rules (`##`, `#@#`, ...).
    pub cosmetic: usize,
    /// Rules that block something but name no domain (path patterns, regexes).
    pub no_domain: usize,
    /// localhost-style and single-label hosts entries.
    pub dropped: usize,
}

impl ParseDiagnostics {
    fn merge(&mut self, other: &ParseDiagnostics) {
        self.rules += other.rules;
        self.comments += other.comments;
        self.malformed += other.malformed;
        self.exceptions += other.exceptions;
        self.cosmetic += other.cosmetic;
        self.no_domain += other.no_domain;
        self.dropped += other.dropped;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedList {
    pub domains: BTreeSet<RegistrableDomain>,
    pub diagnostics: ParseDiagnostics,
}

impl ParsedList {
    pub fn domain_strings(&self) -> BTreeSet<String> {
        self.domains.iter().map(|d| d.as_str().to_string()).collect()
    }
}

/// One dated version of a blacklist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlacklistSnapshot {
    pub list_id: String,
    pub capture_date: NaiveDate,
    pub domains: BTreeSet<RegistrableDomain>,
    pub source_format: FormatKind,
    pub rule_count: usize,
    pub diagnostics: ParseDiagnostics,
}

impl BlacklistSnapshot {
    /// Parses `text` with the format `hint`, or the detected format when the
    /// hint is `None`/`Unknown`.
    pub fn parse(
        list_id: &str,
        capture_date: NaiveDate,
        text: &str,
        hint: Option<FormatKind>,
        table: &SuffixTable,
        mode: SldMode,
    ) -> Self {
        let format = match hint {
            Some(f) if f != FormatKind::Unknown => f,
            _ => detect_format(text),
        };
        let parsed = parse_blacklist(text, format, table, mode);
        BlacklistSnapshot {
            list_id: list_id.to_string(),
            capture_date,
            rule_count: parsed.diagnostics.rules,
            domains: parsed.domains,
            source_format: format,
            diagnostics: parsed.diagnostics,
        }
    }
}

const LOCAL_HOSTNAMES: &[&str] = &[
    "localhost",
    "localhost.localdomain",
    "local",
    "broadcasthost",
    "ip6-localhost",
    "ip6-loopback",
    "ip6-localnet",
    "ip6-mcastprefix",
    "ip6-allnodes",
    "ip6-allrouters",
    "ip6-allhosts",
];

fn is_hash_comment(line: &str) -> bool {
    line.starts_with('#')
}

fn strip_inline_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim_end(),
        None => line,
    }
}

fn is_filter_comment(line: &str) -> bool {
    line.starts_with('!') || (line.starts_with('[') && line.ends_with(']'))
}

fn is_hosts_line(line: &str) -> bool {
    let mut tokens = strip_inline_comment(line).split_whitespace();
    matches!(
        (tokens.next(), tokens.next()),
        (Some(ip), Some(_)) if IpAddr::from_str(ip).is_ok()
    )
}

fn looks_like_hostname(line: &str) -> bool {
    let candidate = strip_inline_comment(line).trim();
    let candidate = candidate.strip_prefix("*.").unwrap_or(candidate);
    !candidate.is_empty()
        && !candidate.contains(char::is_whitespace)
        && candidate.contains('.')
        && crate::domain::normalize_host(candidate).is_ok()
}

fn looks_like_filter_rule(line: &str) -> bool {
    line.starts_with("||") || line.starts_with("@@") || cosmetic_marker(line).is_some_and(|i| i > 0)
}

/// Position of an element-hiding separator (`##`, `#@#`, `#?#`, `#$#`, ...).
fn cosmetic_marker(line: &str) -> Option<usize> {
    const MARKERS: &[&str] = &["#@$?#", "#@%#", "#@$#", "#@?#", "#$?#", "#@#", "#?#", "#$#", "#%#", "##"];
    MARKERS.iter().filter_map(|m| line.find(m)).min()
}

/// Guesses the grammar of a blacklist file by majority of content lines; an
/// `[Adblock ...]` header settles it outright.
pub fn detect_format(text: &str) -> FormatKind {
    let mut hosts = 0usize;
    let mut bare = 0usize;
    let mut content = 0usize;
    let mut filters = 0usize;

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.len() >= 8 && line[..8].eq_ignore_ascii_case("[adblock") {
            return FormatKind::FilterList;
        }
        if line.starts_with('!') || is_hash_comment(line) {
            continue;
        }
        content += 1;
        if looks_like_filter_rule(line) {
            filters += 1;
        } else if is_hosts_line(line) {
            hosts += 1;
        } else if looks_like_hostname(line) {
            bare += 1;
        }
    }

    if filters > 0 && filters >= hosts + bare {
        FormatKind::FilterList
    } else if content > 0 && hosts * 2 > content {
        FormatKind::Hosts
    } else if content > 0 && (hosts + bare) * 2 > content {
        if bare > 0 && hosts == 0 {
            FormatKind::DomainList
        } else if hosts >= bare {
            FormatKind::Hosts
        } else {
            FormatKind::DomainList
        }
    } else {
        FormatKind::Unknown
    }
}

/// Dispatches to the parser for `format`. Hosts, domain-list and unknown
/// inputs go through the line-level dispatcher so that mixed files (a hosts
/// body with stray bare domains) lose nothing.
pub fn parse_blacklist(text: &str, format: FormatKind, table: &SuffixTable, mode: SldMode) -> ParsedList {
    match format {
        FormatKind::FilterList => parse_filter_list(text, table, mode),
        FormatKind::Hosts | FormatKind::DomainList | FormatKind::Unknown => parse_mixed(text, table, mode),
    }
}

struct Collector<'t> {
    table: &'t SuffixTable,
    mode: SldMode,
    out: ParsedList,
}

impl<'t> Collector<'t> {
    fn new(table: &'t SuffixTable, mode: SldMode) -> Self {
        Collector { table, mode, out: ParsedList::default() }
    }

    /// Reduces a hostname entry; returns false if it could not be used.
    fn add_host(&mut self, host: &str) -> bool {
        match registrable_domain(host, self.table, self.mode) {
            Ok(d) => {
                self.out.domains.insert(d);
                true
            }
            Err(_) => false,
        }
    }

    fn hosts_line(&mut self, line: &str) {
        let body = strip_inline_comment(line);
        let mut tokens = body.split_whitespace();
        let ip_ok = tokens.next().is_some_and(|ip| IpAddr::from_str(ip).is_ok());
        let names: Vec<&str> = tokens.collect();
        if !ip_ok || names.is_empty() {
            self.out.diagnostics.malformed += 1;
            return;
        }
        for name in names {
            self.out.diagnostics.rules += 1;
            let lower = name.trim_end_matches('.').to_ascii_lowercase();
            if LOCAL_HOSTNAMES.contains(&lower.as_str()) || IpAddr::from_str(&lower).is_ok() {
                self.out.diagnostics.dropped += 1;
                continue;
            }
            match registrable_domain(name, self.table, self.mode) {
                Ok(d) => {
                    self.out.domains.insert(d);
                }
                Err(DomainError::UnderspecifiedHost(_)) if !lower.contains('.') => {
                    self.out.diagnostics.dropped += 1;
                }
                Err(_) => self.out.diagnostics.malformed += 1,
            }
        }
    }

    fn domain_line(&mut self, line: &str) {
        let body = strip_inline_comment(line).trim();
        let body = body.strip_prefix("*.").or_else(|| body.strip_prefix('.')).unwrap_or(body);
        if body.is_empty() || body.contains(char::is_whitespace) {
            self.out.diagnostics.malformed += 1;
            return;
        }
        self.out.diagnostics.rules += 1;
        if !self.add_host(body) {
            self.out.diagnostics.malformed += 1;
        }
    }

    fn filter_line(&mut self, line: &str) {
        let diag = &mut self.out.diagnostics;
        if line.starts_with("@@") {
            diag.rules += 1;
            diag.exceptions += 1;
            return;
        }
        if cosmetic_marker(line).is_some() {
            diag.rules += 1;
            diag.cosmetic += 1;
            return;
        }
        diag.rules += 1;

        // Regex rules: /.../ possibly followed by options.
        if line.len() > 1 && line.starts_with('/') && (line.ends_with('/') || line[1..].contains("/$")) {
            self.out.diagnostics.no_domain += 1;
            return;
        }

        let (pattern, options) = match line.rfind('$') {
            Some(i) => (&line[..i], Some(&line[i + 1..])),
            None => (line, None),
        };

        if let Some(rest) = pattern.strip_prefix("||") {
            match anchored_host(rest) {
                Some(host) if self.add_host(host) => {}
                _ => self.out.diagnostics.malformed += 1,
            }
            return;
        }
        if let Some(rest) = pattern.strip_prefix('|') {
            let host = rest.find("://").and_then(|i| anchored_host(&rest[i + 3..]));
            match host {
                Some(host) if self.add_host(host) => {}
                _ => self.out.diagnostics.malformed += 1,
            }
            return;
        }

        let option_domains: Vec<&str> = options
            .into_iter()
            .flat_map(|opts| opts.split(','))
            .filter_map(|opt| opt.trim().strip_prefix("domain="))
            .flat_map(|list| list.split('|'))
            .map(str::trim)
            .filter(|d| !d.is_empty() && !d.starts_with('~'))
            .collect();
        if option_domains.is_empty() {
            self.out.diagnostics.no_domain += 1;
            return;
        }
        // The first option domain is covered by the rule count above.
        self.out.diagnostics.rules += option_domains.len() - 1;
        for d in option_domains {
            if !self.add_host(d) {
                self.out.diagnostics.malformed += 1;
            }
        }
    }
}

/// Host part of an anchored filter pattern (`ads.example.com^...`). Patterns
/// whose host contains a wildcard are rejected.
fn anchored_host(rest: &str) -> Option<&str> {
    let end = rest.find(['^', '/', '*', '|', '?', ':', '$']).unwrap_or(rest.len());
    if rest[end..].starts_with('*') {
        return None;
    }
    let host = rest[..end].trim_start_matches('.');
    (!host.is_empty()).then_some(host)
}

/// `<ip> <hostname>... [# comment]` lines.
pub fn parse_hosts(text: &str, table: &SuffixTable, mode: SldMode) -> ParsedList {
    let mut c = Collector::new(table, mode);
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if is_hash_comment(line) {
            c.out.diagnostics.comments += 1;
            continue;
        }
        c.hosts_line(line);
    }
    c.out
}

/// Adblock-style filter rules.
///
/// Domains come from `||host^` anchors, `|scheme://host/` anchors and, only
/// for rules without an anchor, `domain=` option values. Exceptions,
/// element-hiding rules, comments and path/regex rules contribute nothing.
pub fn parse_filter_list(text: &str, table: &SuffixTable, mode: SldMode) -> ParsedList {
    let mut c = Collector::new(table, mode);
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if is_filter_comment(line) {
            c.out.diagnostics.comments += 1;
            continue;
        }
        c.filter_line(line);
    }
    c.out
}

/// One hostname per line; `#` and `!` start comments.
pub fn parse_domain_list(text: &str, table: &SuffixTable, mode: SldMode) -> ParsedList {
    let mut c = Collector::new(table, mode);
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if is_hash_comment(line) || line.starts_with('!') || line.starts_with("//") {
            c.out.diagnostics.comments += 1;
            continue;
        }
        c.domain_line(line);
    }
    c.out
}

/// Line-level dispatch for files that mix hosts lines, bare domains and the
/// odd filter rule.
pub fn parse_mixed(text: &str, table: &SuffixTable, mode: SldMode) -> ParsedList {
    let mut c = Collector::new(table, mode);
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if is_hash_comment(line) || is_filter_comment(line) {
            c.out.diagnostics.comments += 1;
        } else if is_hosts_line(line) {
            c.hosts_line(line);
        } else if looks_like_filter_rule(line) || line.starts_with('|') {
            c.filter_line(line);
        } else {
            c.domain_line(line);
        }
    }
    c.out
}

/// Merges several parses (e.g. the parts of a split list).
pub fn merge(parts: impl IntoIterator<Item = ParsedList>) -> ParsedList {
    let mut out = ParsedList::default();
    for p in parts {
        out.domains.extend(p.domains);
        out.diagnostics.merge(&p.diagnostics);
    }
    out
}
