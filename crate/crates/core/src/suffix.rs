//! Public-suffix rule table.
//!
//! Rules are read from the standard public-suffix text format: one rule per
//! line, `//` comments, `*.` wildcard rules and `!` exception rules. Rules are
//! stored in their ASCII (punycode) form so lookups work on normalized hosts.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

/// The public suffix list shipped with the crate.
const BUNDLED_LIST: &str = include_str!("../data/public_suffix_list.dat");

/// Which sections of a public-suffix file to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuffixSections {
    /// Only the `ICANN DOMAINS` section (registry-operated suffixes).
    #[default]
    IcannOnly,
    /// ICANN plus privately operated suffixes (`github.io`, `blogspot.com`, ...).
    All,
}

#[derive(Debug, thiserror::Error)]
pub enum SuffixTableError {
    #[error("failed to read suffix table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("suffix table contains no rules")]
    Empty,
}

/// A versioned set of public-suffix rules.
#[derive(Clone)]
pub struct SuffixTable {
    version: String,
    plain: HashSet<String>,
    /// Parents of wildcard rules: `*.ck` is stored as `ck`.
    wildcard: HashSet<String>,
    /// Exception rules without the leading `!`.
    exception: HashSet<String>,
}

impl fmt::Debug for SuffixTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SuffixTable").field("version", &self.version).field("rules", &self.len()).finish()
    }
}

impl SuffixTable {
    /// The bundled list, ICANN section only. Parsed once per process.
    pub fn bundled() -> &'static SuffixTable {
        Self::bundled_with(SuffixSections::IcannOnly)
    }

    pub fn bundled_with(sections: SuffixSections) -> &'static SuffixTable {
        static ICANN: OnceLock<SuffixTable> = OnceLock::new();
        static ALL: OnceLock<SuffixTable> = OnceLock::new();
        let cell = match sections {
            SuffixSections::IcannOnly => &ICANN,
            SuffixSections::All => &ALL,
        };
        cell.get_or_init(|| Self::parse_named("bundled", BUNDLED_LIST, sections))
    }

    pub fn load(path: impl AsRef<Path>, sections: SuffixSections) -> Result<Self, SuffixTableError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| SuffixTableError::Io { path: path.display().to_string(), source })?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "file".to_string());
        let table = Self::parse_named(&name, &text, sections);
        if table.is_empty() {
            return Err(SuffixTableError::Empty);
        }
        Ok(table)
    }

    /// Parses rule text; the version is derived from the content digest.
    pub fn parse(text: &str, sections: SuffixSections) -> Self {
        Self::parse_named("custom", text, sections)
    }

    fn parse_named(name: &str, text: &str, sections: SuffixSections) -> Self {
        let digest = Sha256::digest(text.as_bytes());
        let section_tag = match sections {
            SuffixSections::IcannOnly => "icann",
            SuffixSections::All => "all",
        };
        let mut table = SuffixTable {
            version: format!("{name}-{section_tag}@{}", &hex::encode(digest)[..12]),
            plain: HashSet::new(),
            wildcard: HashSet::new(),
            exception: HashSet::new(),
        };

        let mut in_private = false;
        for raw in text.lines() {
            let line = raw.trim();
            if line.starts_with("//") {
                if line.contains("===BEGIN PRIVATE DOMAINS===") {
                    in_private = true;
                } else if line.contains("===END PRIVATE DOMAINS===") {
                    in_private = false;
                }
                continue;
            }
            if line.is_empty() || (in_private && sections == SuffixSections::IcannOnly) {
                continue;
            }
            // Rules end at the first whitespace.
            let rule = line.split_whitespace().next().unwrap_or_default();
            if let Some(rest) = rule.strip_prefix('!') {
                if let Some(ascii) = to_ascii_rule(rest) {
                    table.exception.insert(ascii);
                }
            } else if let Some(rest) = rule.strip_prefix("*.") {
                if let Some(ascii) = to_ascii_rule(rest) {
                    table.wildcard.insert(ascii);
                }
            } else if let Some(ascii) = to_ascii_rule(rule) {
                table.plain.insert(ascii);
            }
        }
        table
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.plain.len() + self.wildcard.len() + self.exception.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of trailing labels of `host` that form its public suffix.
    ///
    /// `host` must already be normalized (lowercase ASCII, no trailing dot).
    /// Hosts under an unknown suffix fall back to their last label.
    pub fn suffix_label_count(&self, host: &str) -> usize {
        let suffixes = label_suffixes(host);
        let total = suffixes.len();

        // Exception rules take priority over every other rule.
        for (i, candidate) in suffixes.iter().enumerate() {
            if self.exception.contains(*candidate) {
                return total - i - 1;
            }
        }
        // Longest matching rule wins; suffixes are ordered longest first.
        for (i, candidate) in suffixes.iter().enumerate() {
            if self.plain.contains(*candidate) {
                return total - i;
            }
            if let Some(parent) = suffixes.get(i + 1) {
                if self.wildcard.contains(*parent) {
                    return total - i;
                }
            }
        }
        1
    }

    /// The public suffix of a normalized host.
    pub fn public_suffix<'h>(&self, host: &'h str) -> &'h str {
        let n = self.suffix_label_count(host);
        let suffixes = label_suffixes(host);
        suffixes[suffixes.len() - n.min(suffixes.len())]
    }
}

/// All label-aligned suffixes of `host`, longest first:
/// `a.b.c` -> [`a.b.c`, `b.c`, `c`].
fn label_suffixes(host: &str) -> Vec<&str> {
    let mut out = vec![host];
    for (i, b) in host.bytes().enumerate() {
        if b == b'.' {
            out.push(&host[i + 1..]);
        }
    }
    out
}

fn to_ascii_rule(rule: &str) -> Option<String> {
    if rule.is_empty() {
        return None;
    }
    if rule.is_ascii() {
        return Some(rule.to_ascii_lowercase());
    }
    idna::domain_to_ascii(rule).ok()
}
