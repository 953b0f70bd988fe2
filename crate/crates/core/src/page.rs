//! Third-party script extraction from captured pages.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};

use crate::archive::{strip_archive_rewrite, PageCapture};
use crate::domain::{is_third_party, url_registrable_domain, RegistrableDomain, SldMode};
use crate::suffix::SuffixTable;

const TOOLBAR_BEGIN: &str = "<!-- BEGIN WAYBACK TOOLBAR INSERT -->";
const TOOLBAR_END: &str = "<!-- END WAYBACK TOOLBAR INSERT -->";

/// `src` values of all external script elements, in document order, with
/// archive URL rewriting undone.
///
/// The scanner is lenient: unclosed tags, unquoted or single-quoted
/// attributes and upper-case markup are all accepted. Script bodies, comments
/// and archive toolbar inserts are skipped.
pub fn extract_script_sources(html: &str) -> Vec<String> {
    let html = remove_toolbar(html);
    let html: &str = &html;
    let mut out = Vec::new();
    let bytes = html.as_bytes();
    let mut pos = 0;

    while let Some(offset) = memchr(b'<', &bytes[pos..]) {
        let start = pos + offset;
        let rest = &html[start..];
        if let Some(comment) = rest.strip_prefix("<!--") {
            pos = match comment.find("-->") {
                Some(end) => start + 4 + end + 3,
                None => bytes.len(),
            };
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") || rest.starts_with("</") {
            pos = skip_past(bytes, start + 1, b'>');
            continue;
        }

        let name_start = start + 1;
        let name_end =
            bytes[name_start..].iter().position(|b| !b.is_ascii_alphanumeric()).map_or(bytes.len(), |p| name_start + p);
        if name_end == name_start {
            pos = start + 1;
            continue;
        }
        let name = html[name_start..name_end].to_ascii_lowercase();
        let (attrs, tag_end) = parse_attributes(html, name_end);
        pos = tag_end;

        match name.as_str() {
            "script" => {
                let src = attrs.iter().find(|(k, _)| k == "src").map(|(_, v)| decode_entities(v.trim()));
                if let Some(src) = src.filter(|s| !s.is_empty()) {
                    out.push(strip_archive_rewrite(&src));
                }
                pos = skip_raw_text(html, pos, "</script");
            }
            "style" | "textarea" | "xmp" => {
                pos = skip_raw_text(html, pos, &format!("</{name}"));
            }
            _ => {}
        }
    }
    out
}

fn remove_toolbar(html: &str) -> std::borrow::Cow<'_, str> {
    let Some(begin) = html.find(TOOLBAR_BEGIN) else {
        return html.into();
    };
    let end = html[begin..].find(TOOLBAR_END).map_or(html.len(), |e| begin + e + TOOLBAR_END.len());
    let mut s = String::with_capacity(html.len());
    s.push_str(&html[..begin]);
    s.push_str(&html[end..]);
    remove_toolbar(&s).into_owned().into()
}

fn memchr(needle: u8, haystack: &[u8]) -> Option<usize> {
    haystack.iter().position(|&b| b == needle)
}

fn skip_past(bytes: &[u8], from: usize, needle: u8) -> usize {
    memchr(needle, &bytes[from..]).map_or(bytes.len(), |p| from + p + 1)
}

/// Skips element content up to (and past) the closing tag, case-insensitively.
fn skip_raw_text(html: &str, from: usize, close: &str) -> usize {
    let bytes = html.as_bytes();
    let close = close.as_bytes();
    let mut i = from;
    while i + close.len() <= bytes.len() {
        if bytes[i] == b'<' && bytes[i..i + close.len()].eq_ignore_ascii_case(close) {
            return skip_past(bytes, i + close.len(), b'>');
        }
        i += 1;
    }
    bytes.len()
}

/// Parses attributes starting right after the tag name; returns them with
/// lowercase names and the offset just past the closing `>`.
fn parse_attributes(html: &str, mut i: usize) -> (Vec<(String, String)>, usize) {
    let bytes = html.as_bytes();
    let mut attrs = Vec::new();
    loop {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'/') {
            i += 1;
        }
        if i >= bytes.len() {
            return (attrs, bytes.len());
        }
        if bytes[i] == b'>' {
            return (attrs, i + 1);
        }
        // A stray '<' means the tag was never closed; let the caller rescan it.
        if bytes[i] == b'<' {
            return (attrs, i);
        }

        let name_start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !matches!(bytes[i], b'=' | b'>' | b'/' | b'<') {
            i += 1;
        }
        let name = html[name_start..i].to_ascii_lowercase();
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'=' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let value = if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let quote = bytes[i];
                let value_start = i + 1;
                let value_end = memchr(quote, &bytes[value_start..]).map_or(bytes.len(), |p| value_start + p);
                i = (value_end + 1).min(bytes.len());
                &html[value_start..value_end]
            } else {
                let value_start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                    i += 1;
                }
                &html[value_start..i]
            };
            attrs.push((name, value.to_string()));
        } else if !name.is_empty() {
            attrs.push((name, String::new()));
        }
    }
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&amp;", "&")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&#x27;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
}

/// One archived page reduced to the third-party domains its scripts load from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageObservation {
    pub site: RegistrableDomain,
    pub year: i32,
    pub quarter: u8,
    pub memento_timestamp: DateTime<Utc>,
    pub third_party_domains: BTreeSet<RegistrableDomain>,
}

/// Reduces a capture to its third-party script domains.
///
/// Sources that fail to parse, point at IP literals or at the archive itself
/// are skipped.
pub fn observe_page(capture: &PageCapture, table: &SuffixTable, mode: SldMode) -> PageObservation {
    let archive_domain = url_registrable_domain(&capture.memento.memento_url, table, mode).ok();
    let third_party_domains = extract_script_sources(&capture.body)
        .iter()
        .filter_map(|src| url_registrable_domain(src, table, mode).ok())
        .filter(|d| Some(d) != archive_domain.as_ref())
        .filter(|d| is_third_party(d, &capture.site))
        .collect();
    PageObservation {
        site: capture.site.clone(),
        year: capture.target.year,
        quarter: capture.target.quarter,
        memento_timestamp: capture.memento.memento_timestamp,
        third_party_domains,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    Site,
    Country,
    Global,
    BlacklistDetections,
}

/// Distinct domains seen for one scope in one year.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YearlyDomainSet<T: Ord = String> {
    pub scope: Scope,
    pub scope_id: String,
    pub year: i32,
    pub domains: BTreeSet<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no observation for {scope_id} in {year}")]
pub struct EmptyYear {
    pub scope_id: String,
    pub year: i32,
}

/// Folds the quarterly observations of one scope-year into a yearly set.
pub fn yearly_union<'a, T, I>(
    observations: I,
    scope: Scope,
    scope_id: &str,
    year: i32,
) -> Result<YearlyDomainSet<T>, EmptyYear>
where
    T: Ord + Clone + 'a,
    I: IntoIterator<Item = &'a BTreeSet<T>>,
{
    let mut seen_any = false;
    let mut domains = BTreeSet::new();
    for quarter in observations {
        seen_any = true;
        domains.extend(quarter.iter().cloned());
    }
    if !seen_any {
        return Err(EmptyYear { scope_id: scope_id.to_string(), year });
    }
    Ok(YearlyDomainSet { scope, scope_id: scope_id.to_string(), year, domains })
}
