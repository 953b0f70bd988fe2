//! Synthetic corpora with known metric values.
//!
//! A scenario evolves a "world" of active ad/tracker domains year by year.
//! Site 0 embeds the whole world in every capture, so the global yearly sets
//! equal the world sets and their churn is known by construction. Other
//! sites embed random subsets, some captures are dropped, and each list
//! picks domains up after a random lag.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveResponse, ResponseCache, TargetDate};
use crate::blacklist::{FormatKind, ParseDiagnostics};
use crate::domain::SldMode;
use crate::pipeline::{BlacklistSource, RunConfig};
use crate::store::{FirstSeenMode, ListRecord, ObservationRecord};

/// Archive base URL used by rendered corpora.
pub const ARCHIVE_BASE: &str = "https://archive.invalid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub from: i32,
    pub to: i32,
}

/// Listing lag, uniform in `mean - spread ..= mean + spread` days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub mean: i64,
    pub spread: i64,
}

impl Default for LagSpec {
    fn default() -> Self {
        LagSpec { mean: 0, spread: 365 }
    }
}

/// A stability value the global entity must hit in `year`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedTarget {
    pub year: i32,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_sites: usize,
    pub n_domains: usize,
    pub years: YearRange,
    /// Probability that an active domain leaves the world each year.
    pub churn_rate: f64,
    #[serde(default)]
    pub listing_lag_days: LagSpec,
    #[serde(default = "default_lists")]
    pub n_lists: usize,
    #[serde(default = "default_countries")]
    pub countries: Vec<String>,
    /// Probability that a quarterly capture of a site (other than site 0) is missing.
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default = "default_benign")]
    pub benign_domains: usize,
    #[serde(default)]
    pub planted_targets: Vec<PlantedTarget>,
}

fn default_lists() -> usize {
    3
}

fn default_countries() -> Vec<String> {
    vec!["au".into(), "de".into(), "in".into()]
}

fn default_benign() -> usize {
    8
}

impl ScenarioSpec {
    pub fn small(seed: u64) -> Self {
        ScenarioSpec {
            seed,
            n_sites: 12,
            n_domains: 40,
            years: YearRange { from: 2009, to: 2017 },
            churn_rate: 0.3,
            listing_lag_days: LagSpec::default(),
            n_lists: 3,
            countries: default_countries(),
            drop_rate: 0.02,
            benign_domains: default_benign(),
            planted_targets: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: &str| Err(FixtureError::InvalidSpec(m.to_string()));
        if self.n_sites == 0 || self.n_domains == 0 || self.n_lists == 0 {
            return bad("n_sites, n_domains and n_lists must be positive");
        }
        if self.years.from > self.years.to {
            return bad("years.from is after years.to");
        }
        if !(0.0..=1.0).contains(&self.churn_rate) || !(0.0..1.0).contains(&self.drop_rate) {
            return bad("churn_rate must be in [0,1] and drop_rate in [0,1)");
        }
        if self.countries.is_empty() {
            return bad("at least one country is required");
        }
        if self.listing_lag_days.spread < 0 {
            return bad("listing_lag_days.spread must be non-negative");
        }
        for t in &self.planted_targets {
            if t.year <= self.years.from || t.year > self.years.to || !(0.0..=1.0).contains(&t.stability) {
                return bad("planted targets need a non-first year in range and a value in [0,1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixtureError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("stability {target} cannot be realized{}", year.map(|y| format!(" in {y}")).unwrap_or_default())]
    UnrealizableTarget { year: Option<i32>, target: f64 },
}

/// Intersection and union sizes realizing a stability value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StabilityPlan {
    pub intersection: usize,
    pub union: usize,
}

fn exact_fraction(target: f64, union: usize) -> Option<usize> {
    let i = (target * union as f64).round();
    (i >= 0.0 && i as usize <= union && i / union as f64 == target).then_some(i as usize)
}

/// Smallest set sizes with `intersection / union == target` inside a
/// universe of `universe` domains, optionally with the union size fixed.
pub fn realize_stability(target: f64, universe: usize, union: Option<usize>) -> Result<StabilityPlan, FixtureError> {
    let unrealizable = FixtureError::UnrealizableTarget { year: None, target };
    let candidates: Vec<usize> = match union {
        Some(u) if u > universe || u == 0 => return Err(unrealizable),
        Some(u) => vec![u],
        None => (1..=universe).collect(),
    };
    candidates
        .into_iter()
        .find_map(|u| exact_fraction(target, u).map(|i| StabilityPlan { intersection: i, union: u }))
        .ok_or(unrealizable)
}

/// Builds this year's world from the previous one so that their Jaccard
/// similarity is exactly `target`.
fn plant(prev: &BTreeSet<usize>, n_domains: usize, target: f64, rng: &mut ChaCha8Rng) -> Option<BTreeSet<usize>> {
    let p = prev.len();
    let (i, u) = (p.max(1)..=n_domains).find_map(|u| {
        let i = exact_fraction(target, u)?;
        (i <= p && u - p + i >= 1).then_some((i, u))
    })?;
    let mut keep: Vec<usize> = prev.iter().copied().collect();
    keep.shuffle(rng);
    let mut fresh: Vec<usize> = (0..n_domains).filter(|d| !prev.contains(d)).collect();
    fresh.shuffle(rng);
    Some(keep[..i].iter().chain(&fresh[..u - p]).copied().collect())
}

pub fn at_domain(i: usize) -> String {
    match i % 4 {
        0 => format!("ads{i}.com"),
        1 => format!("track{i}.net"),
        2 => format!("pixel{i}.co.uk"),
        _ => format!("metrics{i}.io"),
    }
}

pub fn benign_domain(i: usize) -> String {
    format!("cdn{i}.org")
}

pub fn site_domain(i: usize) -> String {
    if i % 5 == 4 {
        format!("site{i}.co.uk")
    } else {
        format!("site{i}.com")
    }
}

/// Churn of the global entity known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedChurn {
    pub year: i32,
    pub stability: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListMeta {
    pub list_id: String,
    pub format: FormatKind,
    pub captures: Vec<DateTime<Utc>>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: ScenarioSpec,
    pub observations: Vec<ObservationRecord>,
    pub lists: Vec<ListRecord>,
    pub list_meta: Vec<ListMeta>,
    /// Active ad/tracker domains per year.
    pub world: BTreeMap<i32, BTreeSet<String>>,
    pub expected: Vec<ExpectedChurn>,
}

fn expected_churn(world: &BTreeMap<i32, BTreeSet<String>>) -> Vec<ExpectedChurn> {
    let mut out = Vec::new();
    let mut seen: BTreeSet<&String> = BTreeSet::new();
    let mut prev: Option<&BTreeSet<String>> = None;
    for (&year, set) in world.iter().skip_while(|(_, s)| s.is_empty()) {
        let (stability, diversity) = match prev {
            None => (0.0, 1.0),
            Some(p) => {
                let inter = set.iter().filter(|d| p.contains(*d)).count();
                let union = set.len() + p.len() - inter;
                let old = set.iter().filter(|d| seen.contains(d)).count();
                (
                    if union == 0 { 0.0 } else { inter as f64 / union as f64 },
                    if set.is_empty() { 0.0 } else { 1.0 - old as f64 / set.len() as f64 },
                )
            }
        };
        out.push(ExpectedChurn { year, stability, diversity });
        seen.extend(set.iter());
        prev = Some(set);
    }
    out
}

fn at(date: NaiveDate, secs: u32) -> DateTime<Utc> {
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight")) + Duration::seconds(i64::from(secs))
}

/// Generates a corpus; identical specs give identical corpora.
pub fn generate_corpus(spec: &ScenarioSpec) -> Result<Corpus, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let years: Vec<i32> = (spec.years.from..=spec.years.to).collect();
    let n = spec.n_domains;

    // World evolution.
    let mut world_idx: BTreeMap<i32, BTreeSet<usize>> = BTreeMap::new();
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let mut current: BTreeSet<usize> = all[..(n / 3).max(1)].iter().copied().collect();
    world_idx.insert(years[0], current.clone());
    for &year in &years[1..] {
        let planted = spec.planted_targets.iter().find(|t| t.year == year);
        current = match planted {
            Some(t) => plant(&current, n, t.stability, &mut rng)
                .ok_or(FixtureError::UnrealizableTarget { year: Some(year), target: t.stability })?,
            None => {
                let kept: BTreeSet<usize> =
                    current.iter().copied().filter(|_| !rng.random_bool(spec.churn_rate)).collect();
                let mut fresh: Vec<usize> = (0..n).filter(|d| !current.contains(d)).collect();
                fresh.shuffle(&mut rng);
                let dropped = current.len() - kept.len();
                kept.into_iter().chain(fresh.into_iter().take(dropped)).collect()
            }
        };
        world_idx.insert(year, current.clone());
    }
    let world: BTreeMap<i32, BTreeSet<String>> =
        world_idx.iter().map(|(y, s)| (*y, s.iter().map(|&d| at_domain(d)).collect())).collect();

    // Sites and page observations.
    let mut observations = Vec::new();
    let mut debut: BTreeMap<String, NaiveDate> = BTreeMap::new();
    for s in 0..spec.n_sites {
        let site = site_domain(s);
        let country_tags = if s == 0 {
            vec![spec.countries[0].clone()]
        } else {
            let mut cs = spec.countries.clone();
            cs.shuffle(&mut rng);
            let k = if cs.len() > 1 && rng.random_bool(0.3) { 2 } else { 1 };
            let mut tags = cs[..k].to_vec();
            tags.sort();
            tags
        };
        let embed_p = rng.random_range(0.1..0.6);
        for &year in &years {
            for quarter in 1..=4u8 {
                if s != 0 && rng.random_bool(spec.drop_rate) {
                    continue;
                }
                let target = TargetDate::new(year, quarter, 3);
                let ts =
                    at(target.nominal_date + Duration::days(rng.random_range(5..=45)), rng.random_range(0..86_400));
                let mut domains: BTreeSet<String> =
                    world[&year].iter().filter(|_| s == 0 || rng.random_bool(embed_p)).cloned().collect();
                for d in &domains {
                    debut.entry(d.clone()).and_modify(|e| *e = (*e).min(ts.date_naive())).or_insert(ts.date_naive());
                }
                domains.extend((0..spec.benign_domains).filter(|_| rng.random_bool(0.2)).map(benign_domain));
                observations.push(ObservationRecord {
                    site: site.clone(),
                    country_tags: country_tags.clone(),
                    year,
                    quarter,
                    memento_timestamp: ts,
                    domains,
                    memento_url: memento_url(&ts, &page_url(&site)),
                    delta_days: (ts - target.nominal_datetime()).num_days(),
                    over_gap: false,
                });
            }
        }
    }

    // Lists.
    let first = spec.years.from;
    let last_day = NaiveDate::from_ymd_opt(spec.years.to, 12, 31).expect("valid year");
    let mut lists = Vec::new();
    let mut list_meta = Vec::new();
    for l in 0..spec.n_lists {
        let list_id = format!("list{}", l + 1);
        let format = [FormatKind::Hosts, FormatKind::FilterList, FormatKind::DomainList][l % 3];
        let start = (first - 1 + l as i32).min(spec.years.to);
        let captures: Vec<DateTime<Utc>> = (start..=spec.years.to)
            .flat_map(|y| (1..=4u8).map(move |q| TargetDate::new(y, q, 3)))
            .map(|t| at(t.nominal_date + Duration::days(rng.random_range(0..=20)), rng.random_range(0..86_400)))
            .collect();
        let last_capture = captures.last().expect("at least one capture").date_naive();
        let mut listed: BTreeMap<String, NaiveDate> = BTreeMap::new();
        for d in 0..n {
            if l != 0 && !rng.random_bool(0.6) {
                continue;
            }
            let name = at_domain(d);
            let base =
                debut.get(&name).copied().unwrap_or_else(|| {
                    NaiveDate::from_ymd_opt(first, 1, 1).expect("valid")
                        + Duration::days(rng.random_range(
                            0..=(last_day - NaiveDate::from_ymd_opt(first, 1, 1).expect("valid")).num_days(),
                        ))
                });
            let lag = spec.listing_lag_days;
            let mut date = base + Duration::days(rng.random_range(lag.mean - lag.spread..=lag.mean + lag.spread));
            if l == 0 {
                date = date.min(last_capture);
            }
            listed.insert(name, date);
        }
        for ts in &captures {
            let day = ts.date_naive();
            let domains: BTreeSet<String> = listed.iter().filter(|(_, d)| **d <= day).map(|(k, _)| k.clone()).collect();
            lists.push(ListRecord {
                list_id: list_id.clone(),
                capture_date: day,
                rule_count: domains.len(),
                domains,
                source_format: format,
                diagnostics: ParseDiagnostics::default(),
            });
        }
        list_meta.push(ListMeta { list_id, format, captures });
    }

    let expected = expected_churn(&world);
    Ok(Corpus { spec: spec.clone(), observations, lists, list_meta, world, expected })
}

pub fn page_url(site: &str) -> String {
    format!("http://{site}/")
}

pub fn list_url(list_id: &str) -> String {
    format!("http://lists.invalid/{list_id}.txt")
}

fn memento_url(ts: &DateTime<Utc>, original: &str) -> String {
    format!("{ARCHIVE_BASE}/web/{}/{original}", ts.format("%Y%m%d%H%M%S"))
}

fn timemap_url(original: &str) -> String {
    format!("{ARCHIVE_BASE}/web/timemap/link/{original}")
}

fn render_page(site: &str, ts: &DateTime<Utc>, domains: &BTreeSet<String>, rng: &mut ChaCha8Rng) -> String {
    let stamp = ts.format("%Y%m%d%H%M%S");
    let mut order: Vec<&String> = domains.iter().collect();
    order.shuffle(rng);
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html><head><title>{site}</title>\n\
         <script src=\"{ARCHIVE_BASE}/_static/js/playback.js\"></script>\n\
         <!-- BEGIN WAYBACK TOOLBAR INSERT -->\n<script src=\"{ARCHIVE_BASE}/static/toolbar.js\"></script>\n<!-- END WAYBACK TOOLBAR INSERT -->\n\
         <script src=\"/static/app.js\"></script>\n\
         <script>var tag = '<script src=\"http://inline.invalid/x.js\"></script>';</script>\n</head><body>\n"
    );
    for d in order {
        let line = match rng.random_range(0..5u8) {
            0 => format!("<script src=\"http://cdn.{d}/tag.js\"></script>"),
            1 => format!("<SCRIPT type=\"text/javascript\" SRC='https://{d}/js/a.js'></SCRIPT>"),
            2 => format!("<script async src={ARCHIVE_BASE}/web/{stamp}js_/http://px.{d}/p.js></script>"),
            3 => format!("<script src=\"//static.{d}/lib.js?v=1&amp;t=2\" defer></script>"),
            _ => format!("<div class=\"ad\"><script\n  src=\"http://www.{d}/show_ads.js\"></script></div>"),
        };
        html.push_str(&line);
        html.push('\n');
    }
    let _ = write!(
        html,
        "<!-- <script src=\"http://commented.invalid/x.js\"></script> -->\n\
         <img src=\"http://img.invalid/x.png\">\n<script src=\"http://{site}/static/first-party.js\"></script>\n</body></html>\n"
    );
    html
}

fn render_list(meta: &ListMeta, date: NaiveDate, domains: &BTreeSet<String>) -> String {
    let mut out = String::new();
    match meta.format {
        FormatKind::Hosts => {
            let _ = writeln!(
                out,
                "# {} hosts file\n# Last updated: {date}\n127.0.0.1 localhost\n::1 localhost",
                meta.list_id
            );
            for (i, d) in domains.iter().enumerate() {
                match i % 3 {
                    0 => out.push_str(&format!("127.0.0.1 {d}\n")),
                    1 => out.push_str(&format!("0.0.0.0 ad.{d} # tracker\n")),
                    _ => out.push_str(&format!("127.0.0.1\tstats.{d}\n")),
                }
            }
        }
        FormatKind::FilterList => {
            let _ = writeln!(
                out,
                "[Adblock Plus 2.0]\n! Title: {}\n! Last modified: {date}\n##.ad-banner\n@@||cdn0.org^$script",
                meta.list_id
            );
            for (i, d) in domains.iter().enumerate() {
                match i % 3 {
                    0 => out.push_str(&format!("||{d}^\n")),
                    1 => out.push_str(&format!("||ads.{d}^$third-party\n")),
                    _ => out.push_str(&format!("|http://{d}/pixel.gif\n")),
                }
            }
        }
        _ => {
            let _ = writeln!(out, "# {} domains, {date}", meta.list_id);
            for d in domains {
                out.push_str(d);
                out.push('\n');
            }
        }
    }
    out
}

fn timemap_body(original: &str, stamps: &[DateTime<Utc>]) -> String {
    let mut lines = vec![format!("<{original}>; rel=\"original\"")];
    for ts in stamps {
        lines.push(format!(
            "<{}>; rel=\"memento\"; datetime=\"{}\"",
            memento_url(ts, original),
            ts.format("%a, %d %b %Y %H:%M:%S GMT")
        ));
    }
    lines.join(",\n")
}

/// Writes the corpus as an archive response cache plus site lists and a run
/// configuration that replays it offline. Returns the configuration path.
///
/// Some intervals get extra mementos closer to the interval start that
/// redirect, so the retry path is exercised.
pub fn render_archive(corpus: &Corpus, dir: &Path) -> io::Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus.spec.seed ^ 0x7265_6e64_6572);
    fs::create_dir_all(dir.join("sites"))?;
    let cache = ResponseCache::open(dir.join("archive-cache"))?;

    let mut by_site: BTreeMap<&str, Vec<&ObservationRecord>> = BTreeMap::new();
    let mut countries: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for o in &corpus.observations {
        by_site.entry(&o.site).or_default().push(o);
        for c in &o.country_tags {
            countries.entry(c).or_default().insert(&o.site);
        }
    }
    for (site, obs) in &by_site {
        let original = page_url(site);
        let mut stamps = Vec::new();
        for o in obs {
            let ts = o.memento_timestamp;
            let nominal = TargetDate::new(o.year, o.quarter, 3).nominal_datetime();
            let decoys = if rng.random_bool(0.2) { rng.random_range(1..=3u32) } else { 0 };
            for k in 0..decoys {
                let decoy = nominal + Duration::days(i64::from(k)) + Duration::seconds(rng.random_range(0..3600));
                let url = memento_url(&decoy, &original);
                cache.insert(
                    &url,
                    &ArchiveResponse::redirect(302, &memento_url(&(decoy + Duration::days(400)), &original)),
                )?;
                stamps.push(decoy);
            }
            let body = render_page(site, &ts, &o.domains, &mut rng);
            cache.insert(&memento_url(&ts, &original), &ArchiveResponse::ok(body))?;
            stamps.push(ts);
        }
        stamps.sort();
        cache.insert(&timemap_url(&original), &ArchiveResponse::ok(timemap_body(&original, &stamps)))?;
    }

    let mut blacklists = BTreeMap::new();
    for meta in &corpus.list_meta {
        let original = list_url(&meta.list_id);
        let records: BTreeMap<NaiveDate, &ListRecord> =
            corpus.lists.iter().filter(|r| r.list_id == meta.list_id).map(|r| (r.capture_date, r)).collect();
        for ts in &meta.captures {
            let rec = records[&ts.date_naive()];
            cache.insert(
                &memento_url(ts, &original),
                &ArchiveResponse::ok(render_list(meta, rec.capture_date, &rec.domains)),
            )?;
        }
        cache.insert(&timemap_url(&original), &ArchiveResponse::ok(timemap_body(&original, &meta.captures)))?;
        blacklists.insert(
            meta.list_id.clone(),
            BlacklistSource { url: Some(original), path: None, date: None, format: Some(meta.format) },
        );
    }

    let mut site_lists = BTreeMap::new();
    for (country, sites) in &countries {
        let file = format!("sites/{country}.txt");
        let body: String = sites.iter().map(|s| format!("{s}\n")).collect();
        fs::write(dir.join(&file), body)?;
        site_lists.insert(country.to_string(), PathBuf::from(file));
    }

    let config = RunConfig {
        from_year: corpus.spec.years.from,
        to_year: corpus.spec.years.to,
        interval_months: 3,
        list_from_year: Some(corpus.spec.years.from - 1),
        cache_dir: Some(PathBuf::from("archive-cache")),
        psl_mode: SldMode::SuffixAware,
        psl_private: false,
        out: PathBuf::from("out"),
        archive_base: ARCHIVE_BASE.to_string(),
        offline: true,
        rate_limit: 0.0,
        max_parallel: 2,
        max_tries_per_interval: 4,
        first_seen: FirstSeenMode::YearLocal,
        site_lists,
        blacklists,
    };
    let path = dir.join("run.toml");
    fs::write(&path, toml::to_string(&config).map_err(io::Error::other)?)?;
    Ok(path)
}
