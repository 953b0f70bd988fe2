//! On-disk response cache.
//!
//! Layout: `bodies/<sha256>` holds response bodies, `index.jsonl` maps each
//! requested URL to its status, redirect target and body digest. Replaying a
//! cache yields byte-identical responses, so a crawl can be re-run offline.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Archive, ArchiveError, ArchiveResponse};

pub fn body_digest(body: &[u8]) -> String {
    hex::encode(Sha256::digest(body))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    url: String,
    status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<String>,
    digest: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    index: Mutex<BTreeMap<String, IndexEntry>>,
}

impl ResponseCache {
    /// Opens (creating if needed) a cache directory.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("bodies"))?;
        let mut index = BTreeMap::new();
        let path = dir.join("index.jsonl");
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: IndexEntry = serde_json::from_str(&line)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                // later lines supersede earlier ones
                index.insert(entry.url.clone(), entry);
            }
        }
        Ok(ResponseCache { dir, index: Mutex::new(index) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, url: &str) -> bool {
        self.index.lock().expect("cache index lock").contains_key(url)
    }

    pub fn lookup(&self, url: &str) -> io::Result<Option<ArchiveResponse>> {
        let entry = self.index.lock().expect("cache index lock").get(url).cloned();
        let Some(entry) = entry else { return Ok(None) };
        let body = self.body(&entry.digest)?;
        Ok(Some(ArchiveResponse { status: entry.status, location: entry.location, body }))
    }

    pub fn body(&self, digest: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir.join("bodies").join(digest))
    }

    /// Stores a response; returns the body digest.
    pub fn insert(&self, url: &str, resp: &ArchiveResponse) -> io::Result<String> {
        let digest = body_digest(&resp.body);
        let body_path = self.dir.join("bodies").join(&digest);
        if !body_path.exists() {
            let tmp = body_path.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, &resp.body)?;
            fs::rename(&tmp, &body_path)?;
        }
        let entry = IndexEntry {
            url: url.to_string(),
            status: resp.status,
            location: resp.location.clone(),
            digest: digest.clone(),
        };
        let mut index = self.index.lock().expect("cache index lock");
        if index.get(url) != Some(&entry) {
            let mut file = OpenOptions::new().create(true).append(true).open(self.dir.join("index.jsonl"))?;
            let line = serde_json::to_string(&entry).map_err(io::Error::other)?;
            writeln!(file, "{line}")?;
            index.insert(url.to_string(), entry);
        }
        Ok(digest)
    }
}

/// An archive transport backed by a [`ResponseCache`].
///
/// With an upstream transport, misses are fetched and recorded. Without one
/// the archive is offline and misses fail as unreachable.
pub struct CachedArchive<A> {
    upstream: Option<A>,
    cache: ResponseCache,
}

impl<A: Archive> CachedArchive<A> {
    pub fn recording(upstream: A, cache: ResponseCache) -> Self {
        CachedArchive { upstream: Some(upstream), cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl CachedArchive<super::HttpArchive> {
    pub fn offline(cache: ResponseCache) -> Self {
        CachedArchive { upstream: None, cache }
    }
}

impl<A: Archive> Archive for CachedArchive<A> {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        match self.cache.lookup(url) {
            Ok(Some(resp)) => return Ok(resp),
            Ok(None) => {}
            Err(e) => log::warn!("cache read failed for {url}: {e}"),
        }
        let Some(upstream) = &self.upstream else {
            return Err(ArchiveError::ArchiveUnreachable(format!("offline and not cached: {url}")));
        };
        let resp = upstream.get(url)?;
        if let Err(e) = self.cache.insert(url, &resp) {
            log::warn!("cache write failed for {url}: {e}");
        }
        Ok(resp)
    }

    fn is_local(&self, url: &str) -> bool {
        self.upstream.is_none() || self.cache.contains(url)
    }
}
