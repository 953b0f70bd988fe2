//! Link-format timemaps (`application/link-format`).

use chrono::{DateTime, Utc};

use super::timestamp_from_archive_url;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimemapEntry {
    pub uri: String,
    pub timestamp: DateTime<Utc>,
}

/// Memento entries of a link-format timemap, in document order.
///
/// Entries whose `rel` does not include `memento` (original, timegate,
/// self, timemap) are skipped. The capture time comes from the `datetime`
/// parameter, or from the archive URL when that parameter is absent.
pub fn parse_link_timemap(text: &str) -> Vec<TimemapEntry> {
    let mut out = Vec::new();
    for (uri, params) in split_links(text) {
        let mut rel = None;
        let mut datetime = None;
        for param in split_params(params) {
            let Some((key, value)) = param.split_once('=') else { continue };
            let value = value.trim().trim_matches('"');
            match key.trim().to_ascii_lowercase().as_str() {
                "rel" => rel = Some(value.to_string()),
                "datetime" => datetime = Some(value.to_string()),
                _ => {}
            }
        }
        let is_memento = rel.as_deref().is_some_and(|r| r.split_whitespace().any(|t| t == "memento"));
        if !is_memento {
            continue;
        }
        let timestamp = datetime
            .and_then(|d| DateTime::parse_from_rfc2822(&d).ok().map(|t| t.with_timezone(&Utc)))
            .or_else(|| timestamp_from_archive_url(uri));
        if let Some(timestamp) = timestamp {
            out.push(TimemapEntry { uri: uri.to_string(), timestamp });
        }
    }
    out
}

/// Splits into `(uri, params)` pairs. Commas inside quoted values (as in
/// HTTP dates) do not separate links.
fn split_links(text: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        let Some(close) = rest[open..].find('>') else { break };
        let uri = rest[open + 1..open + close].trim();
        let after = &rest[open + close + 1..];
        let mut in_quotes = false;
        let mut end = after.len();
        for (i, c) in after.char_indices() {
            match c {
                '"' => in_quotes = !in_quotes,
                ',' if !in_quotes => {
                    end = i;
                    break;
                }
                _ => {}
            }
        }
        out.push((uri, &after[..end]));
        rest = &after[(end + 1).min(after.len())..];
    }
    out
}

fn split_params(params: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut in_quotes = false;
    let mut start = 0;
    for (i, c) in params.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            ';' if !in_quotes => {
                out.push(&params[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&params[start..]);
    out.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
}
