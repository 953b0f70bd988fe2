//! URLs, hosts and registrable domains.
//!
//! Every comparison in the pipeline happens at registrable-domain granularity:
//! a script loaded from `ad.doubleclick.net` is attributed to
//! `doubleclick.net`, and a page on `static.wikia.com` belongs to `wikia.com`.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::suffix::SuffixTable;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("malformed URL {0:?}: no parseable host")]
    MalformedUrl(String),
    #[error("invalid hostname {0:?}")]
    InvalidHost(String),
    #[error("IP literal {0:?} has no registrable domain")]
    IpLiteral(String),
    #[error("host {0:?} has no label below its public suffix")]
    UnderspecifiedHost(String),
}

/// How a host is reduced to the unit used for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SldMode {
    /// The last two labels, whatever the suffix (`co.uk` for `x.example.co.uk`).
    #[serde(alias = "naive")]
    NaiveSld,
    /// Public suffix plus one label (`example.co.uk`).
    #[default]
    SuffixAware,
}

impl FromStr for SldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" | "naive-sld" => Ok(SldMode::NaiveSld),
            "suffix-aware" => Ok(SldMode::SuffixAware),
            other => Err(format!("unknown psl mode {other:?} (expected suffix-aware or naive)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostKind {
    Domain,
    Ipv4,
    Ipv6,
}

/// A URL decomposed into the parts the pipeline cares about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UrlParts {
    /// `None` for scheme-relative URLs (`//host/path`).
    pub scheme: Option<String>,
    /// Lowercase ASCII host without a trailing dot. IPv6 hosts keep brackets.
    pub host: String,
    pub host_kind: HostKind,
    pub port: Option<u16>,
    pub path: String,
    pub query: Option<String>,
}

impl UrlParts {
    pub fn is_ip_literal(&self) -> bool {
        self.host_kind != HostKind::Domain
    }
}

/// Splits a URL into scheme, host, port, path and query.
///
/// Scheme-relative URLs are accepted and reported with an unknown scheme.
/// URLs without a host (`javascript:`, `data:`, relative paths) are rejected.
pub fn parse_url(raw: &str) -> Result<UrlParts, DomainError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(DomainError::MalformedUrl(raw.to_string()));
    }
    let scheme_relative = trimmed.starts_with("//");
    let parsed = if scheme_relative { url::Url::parse(&format!("http:{trimmed}")) } else { url::Url::parse(trimmed) }
        .map_err(|_| DomainError::MalformedUrl(raw.to_string()))?;

    let (host, host_kind) = match parsed.host() {
        Some(url::Host::Domain(d)) => {
            let d = d.trim_end_matches('.');
            if d.is_empty() {
                return Err(DomainError::MalformedUrl(raw.to_string()));
            }
            (d.to_ascii_lowercase(), HostKind::Domain)
        }
        Some(url::Host::Ipv4(ip)) => (ip.to_string(), HostKind::Ipv4),
        Some(url::Host::Ipv6(ip)) => (format!("[{ip}]"), HostKind::Ipv6),
        None => return Err(DomainError::MalformedUrl(raw.to_string())),
    };

    Ok(UrlParts {
        scheme: (!scheme_relative).then(|| parsed.scheme().to_string()),
        host,
        host_kind,
        port: parsed.port(),
        path: parsed.path().to_string(),
        query: parsed.query().map(str::to_string),
    })
}

/// Normalizes a bare hostname: trims, lowercases, strips one trailing dot and
/// converts internationalized labels to punycode.
///
/// IP literals are rejected with [`DomainError::IpLiteral`].
pub fn normalize_host(raw: &str) -> Result<String, DomainError> {
    let trimmed = raw.trim();
    let stripped = trimmed.strip_suffix('.').unwrap_or(trimmed);
    if stripped.is_empty() {
        return Err(DomainError::InvalidHost(raw.to_string()));
    }
    let unbracketed = stripped.trim_start_matches('[').trim_end_matches(']');
    if IpAddr::from_str(unbracketed).is_ok() {
        return Err(DomainError::IpLiteral(raw.to_string()));
    }

    let host = if stripped.is_ascii() {
        stripped.to_ascii_lowercase()
    } else {
        idna::domain_to_ascii(stripped).map_err(|_| DomainError::InvalidHost(raw.to_string()))?
    };

    if host.len() > 253 {
        return Err(DomainError::InvalidHost(raw.to_string()));
    }
    for label in host.split('.') {
        let valid = !label.is_empty()
            && label.len() <= 63
            && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_');
        if !valid {
            return Err(DomainError::InvalidHost(raw.to_string()));
        }
    }
    // All-numeric dotted hosts that are not valid IPv4 (e.g. 999.1.1.1) are not names either.
    if host.split('.').all(|l| l.bytes().all(|b| b.is_ascii_digit())) {
        return Err(DomainError::IpLiteral(raw.to_string()));
    }
    Ok(host)
}

/// The canonical matching unit, e.g. `doubleclick.net`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegistrableDomain {
    value: String,
    mode: SldMode,
}

impl RegistrableDomain {
    pub fn as_str(&self) -> &str {
        &self.value
    }

    pub fn mode(&self) -> SldMode {
        self.mode
    }

    pub fn into_string(self) -> String {
        self.value
    }
}

impl fmt::Display for RegistrableDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

impl AsRef<str> for RegistrableDomain {
    fn as_ref(&self) -> &str {
        &self.value
    }
}

/// Reduces a hostname to its registrable domain.
pub fn registrable_domain(host: &str, table: &SuffixTable, mode: SldMode) -> Result<RegistrableDomain, DomainError> {
    let host = normalize_host(host)?;
    let labels = host.split('.').count();
    if labels < 2 {
        return Err(DomainError::UnderspecifiedHost(host));
    }
    let keep = match mode {
        SldMode::NaiveSld => 2,
        SldMode::SuffixAware => {
            let suffix_labels = table.suffix_label_count(&host);
            if suffix_labels >= labels {
                return Err(DomainError::UnderspecifiedHost(host));
            }
            suffix_labels + 1
        }
    };
    let value = last_labels(&host, keep).to_string();
    Ok(RegistrableDomain { value, mode })
}

/// Convenience: URL -> registrable domain of its host. IP hosts are rejected.
pub fn url_registrable_domain(raw: &str, table: &SuffixTable, mode: SldMode) -> Result<RegistrableDomain, DomainError> {
    let parts = parse_url(raw)?;
    if parts.is_ip_literal() {
        return Err(DomainError::IpLiteral(parts.host));
    }
    registrable_domain(&parts.host, table, mode)
}

/// True iff a script source belongs to a different registrable domain than the
/// embedding site. Both sides must come from the same [`SldMode`].
pub fn is_third_party(source: &RegistrableDomain, site: &RegistrableDomain) -> bool {
    debug_assert_eq!(source.mode, site.mode, "domains reduced under different modes");
    source.value != site.value
}

fn last_labels(host: &str, n: usize) -> &str {
    let mut seen = 0;
    for (i, b) in host.bytes().enumerate().rev() {
        if b == b'.' {
            seen += 1;
            if seen == n {
                return &host[i + 1..];
            }
        }
    }
    host
}
