//! Churn, update-speed and prominence metrics.
//!
//! The set and score functions at the top are pure. [`analyze`] builds the
//! per-entity yearly sets and detections from a [`StoreView`] and produces
//! every row kind the reports need.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::store::{DetectionRecord, FirstSeenMode, ListSelector, SiteScope, StoreError, StoreView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityKind {
    List,
    Country,
    Global,
    ListCountry,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::List => "list",
            EntityKind::Country => "country",
            EntityKind::Global => "global",
            EntityKind::ListCountry => "list-country",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKey {
    List(String),
    Country(String),
    Global,
    ListCountry { list: String, country: String },
}

impl EntityKey {
    pub fn kind(&self) -> EntityKind {
        match self {
            EntityKey::List(_) => EntityKind::List,
            EntityKey::Country(_) => EntityKind::Country,
            EntityKey::Global => EntityKind::Global,
            EntityKey::ListCountry { .. } => EntityKind::ListCountry,
        }
    }

    fn selector(&self) -> ListSelector {
        match self {
            EntityKey::List(l) | EntityKey::ListCountry { list: l, .. } => ListSelector::Single(l.clone()),
            EntityKey::Country(_) | EntityKey::Global => ListSelector::Union,
        }
    }

    fn scope(&self) -> SiteScope {
        match self {
            EntityKey::Country(c) | EntityKey::ListCountry { country: c, .. } => SiteScope::Country(c.clone()),
            EntityKey::List(_) | EntityKey::Global => SiteScope::All,
        }
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityKey::List(l) => f.write_str(l),
            EntityKey::Country(c) => f.write_str(c),
            EntityKey::Global => f.write_str("global"),
            EntityKey::ListCountry { list, country } => write!(f, "{list}@{country}"),
        }
    }
}

/// Jaccard similarity of consecutive years' sets; 0 when both are empty.
pub fn stability<T: Ord>(current: &BTreeSet<T>, previous: &BTreeSet<T>) -> f64 {
    let inter = current.intersection(previous).count();
    let union = current.len() + previous.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Share of `current` not seen in any earlier year, and whether `current`
/// was empty (in which case the value is 0).
pub fn diversity<T: Ord>(current: &BTreeSet<T>, all_previous: &BTreeSet<T>) -> (f64, bool) {
    if current.is_empty() {
        return (0.0, true);
    }
    let seen = current.intersection(all_previous).count();
    (1.0 - seen as f64 / current.len() as f64, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnRow {
    pub entity: EntityKey,
    pub year: i32,
    pub stability: f64,
    pub diversity: f64,
    /// Non-first year with an empty set.
    pub degenerate: bool,
    pub domains: usize,
}

/// Churn rows from yearly sets, starting at the first year with a
/// non-empty set. Years absent from `sets` count as empty.
pub fn churn_series<T: Ord + Clone>(
    entity: &EntityKey,
    years: &[i32],
    sets: &BTreeMap<i32, BTreeSet<T>>,
) -> Vec<ChurnRow> {
    let empty = BTreeSet::new();
    let Some(start) = years.iter().position(|y| sets.get(y).is_some_and(|s| !s.is_empty())) else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    let mut history: BTreeSet<T> = BTreeSet::new();
    let mut previous: &BTreeSet<T> = &empty;
    for (i, year) in years[start..].iter().enumerate() {
        let current = sets.get(year).unwrap_or(&empty);
        let (stab, div, degenerate) = if i == 0 {
            (0.0, 1.0, false)
        } else {
            let (d, degenerate) = diversity(current, &history);
            (stability(current, previous), d, degenerate)
        };
        rows.push(ChurnRow {
            entity: entity.clone(),
            year: *year,
            stability: stab,
            diversity: div,
            degenerate,
            domains: current.len(),
        });
        history.extend(current.iter().cloned());
        previous = current;
    }
    rows
}

/// Unnormalized speed scores of one (entity, year).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpeedRaw {
    pub reactive_raw: f64,
    pub proactive_raw: f64,
    pub mean_reactive_days: Option<f64>,
    pub mean_proactive_days: Option<f64>,
    pub n_reactive: usize,
    pub n_proactive: usize,
}

/// Reactive score `n / mean(td)` over positive time differences and
/// proactive score `n * |mean(td)|` over the rest, counting distinct
/// (site, domain) pairs.
pub fn speed_raw<'a>(detections: impl IntoIterator<Item = &'a DetectionRecord>) -> SpeedRaw {
    let mut pairs: BTreeMap<(&str, &str), i64> = BTreeMap::new();
    for d in detections {
        pairs.entry((d.site.as_str(), d.domain.as_str())).or_insert(d.time_difference_days);
    }
    let (mut n_r, mut sum_r, mut n_p, mut sum_p) = (0usize, 0i64, 0usize, 0i64);
    for td in pairs.values() {
        if *td > 0 {
            n_r += 1;
            sum_r += td;
        } else {
            n_p += 1;
            sum_p += td;
        }
    }
    let mean_r = (n_r > 0).then(|| sum_r as f64 / n_r as f64);
    let mean_p = (n_p > 0).then(|| sum_p as f64 / n_p as f64);
    SpeedRaw {
        // n / (sum / n) and n * |sum / n|, with a single rounding each
        reactive_raw: if n_r > 0 { (n_r * n_r) as f64 / sum_r as f64 } else { 0.0 },
        proactive_raw: sum_p.unsigned_abs() as f64,
        mean_reactive_days: mean_r,
        mean_proactive_days: mean_p,
        n_reactive: n_r,
        n_proactive: n_p,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedRow {
    pub entity: EntityKey,
    pub year: i32,
    pub reactive: f64,
    pub proactive: f64,
    pub reactive_raw: f64,
    pub proactive_raw: f64,
    pub mean_reactive_days: Option<f64>,
    pub mean_proactive_days: Option<f64>,
    pub n_reactive: usize,
    pub n_proactive: usize,
}

impl SpeedRow {
    pub fn new(entity: EntityKey, year: i32, raw: SpeedRaw) -> Self {
        SpeedRow {
            entity,
            year,
            reactive: 0.0,
            proactive: 0.0,
            reactive_raw: raw.reactive_raw,
            proactive_raw: raw.proactive_raw,
            mean_reactive_days: raw.mean_reactive_days,
            mean_proactive_days: raw.mean_proactive_days,
            n_reactive: raw.n_reactive,
            n_proactive: raw.n_proactive,
        }
    }
}

/// Divides each raw value by the maximum in `values`; all-zero input stays zero.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| if *v == max { 1.0 } else { v / max }).collect()
}

/// Fills the normalized scores, using each entity kind as one group.
pub fn normalize_scores(rows: &mut [SpeedRow]) {
    let kinds: BTreeSet<EntityKind> = rows.iter().map(|r| r.entity.kind()).collect();
    for kind in kinds {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].entity.kind() == kind).collect();
        let reactive = normalize(&idx.iter().map(|&i| rows[i].reactive_raw).collect::<Vec<_>>());
        let proactive = normalize(&idx.iter().map(|&i| rows[i].proactive_raw).collect::<Vec<_>>());
        for (k, &i) in idx.iter().enumerate() {
            rows[i].reactive = reactive[k];
            rows[i].proactive = proactive[k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageBy {
    Years,
    Countries,
    Both,
}

impl fmt::Display for AverageBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AverageBy::Years => "years",
            AverageBy::Countries => "countries",
            AverageBy::Both => "both",
        })
    }
}

/// A row whose named score fields can be averaged.
pub trait Scored {
    fn entity(&self) -> &EntityKey;
    fn year(&self) -> i32;
    fn scores(&self) -> Vec<(&'static str, f64)>;
}

impl Scored for ChurnRow {
    fn entity(&self) -> &EntityKey {
        &self.entity
    }
    fn year(&self) -> i32 {
        self.year
    }
    fn scores(&self) -> Vec<(&'static str, f64)> {
        vec![("stability", self.stability), ("diversity", self.diversity)]
    }
}

impl Scored for SpeedRow {
    fn entity(&self) -> &EntityKey {
        &self.entity
    }
    fn year(&self) -> i32 {
        self.year
    }
    fn scores(&self) -> Vec<(&'static str, f64)> {
        vec![("reactive", self.reactive), ("proactive", self.proactive)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageRow {
    pub by: AverageBy,
    pub kind: EntityKind,
    /// Entity, list or `*` depending on the grouping.
    pub group: String,
    /// `None` when averaged over years.
    pub year: Option<i32>,
    pub field: &'static str,
    pub mean: f64,
    pub cells: usize,
}

/// Means of each score field over years, countries or both. Only cells
/// that exist are averaged.
///
/// Averaging over countries applies to country entities (all countries
/// pooled) and list-country entities (pooled per list); other kinds have no
/// country dimension and are skipped for that grouping.
pub fn average_over<R: Scored>(rows: &[R], by: AverageBy) -> Vec<AverageRow> {
    type Key = (EntityKind, String, Option<i32>, &'static str);
    let mut acc: BTreeMap<Key, (f64, usize)> = BTreeMap::new();
    for row in rows {
        let entity = row.entity();
        let kind = entity.kind();
        let country_group = match entity {
            EntityKey::Country(_) => Some("*".to_string()),
            EntityKey::ListCountry { list, .. } => Some(list.clone()),
            _ => None,
        };
        let (group, year) = match by {
            AverageBy::Years => (entity.to_string(), None),
            AverageBy::Countries => match country_group {
                Some(g) => (g, Some(row.year())),
                None => continue,
            },
            AverageBy::Both => match country_group {
                Some(g) => (g, None),
                None => continue,
            },
        };
        for (field, value) in row.scores() {
            let e = acc.entry((kind, group.clone(), year, field)).or_insert((0.0, 0));
            e.0 += value;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|((kind, group, year, field), (sum, n))| AverageRow {
            by,
            kind,
            group,
            year,
            field,
            mean: sum / n as f64,
            cells: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProminenceRow {
    pub entity: EntityKey,
    pub year: i32,
    pub distinct_domains_per_site_sum: usize,
    pub sites: usize,
    pub per_site_average: f64,
    /// Percent of sites whose count rose since the previous year; `None` in
    /// the first year.
    pub pct_sites_increase: Option<f64>,
    pub pct_sites_decrease: Option<f64>,
    /// Signed count change -> number of sites, non-zero changes only.
    pub change_histogram: BTreeMap<i64, usize>,
}

/// Prominence rows from per-site yearly blocked-domain counts. A site
/// missing a year counts as 0 there.
pub fn prominence(
    entity: &EntityKey,
    years: &[i32],
    counts: &BTreeMap<String, BTreeMap<i32, usize>>,
) -> Vec<ProminenceRow> {
    let sites = counts.len();
    let mut rows = Vec::new();
    for (i, &year) in years.iter().enumerate() {
        let count = |site: &BTreeMap<i32, usize>, y: i32| site.get(&y).copied().unwrap_or(0) as i64;
        let sum: usize = counts.values().map(|c| count(c, year) as usize).sum();
        let mut histogram = BTreeMap::new();
        let (mut up, mut down) = (0usize, 0usize);
        if i > 0 {
            for c in counts.values() {
                let delta = count(c, year) - count(c, years[i - 1]);
                if delta != 0 {
                    *histogram.entry(delta).or_insert(0) += 1;
                }
                if delta > 0 {
                    up += 1;
                } else if delta < 0 {
                    down += 1;
                }
            }
        }
        let pct = |n: usize| {
            if i == 0 {
                None
            } else if sites == 0 {
                Some(0.0)
            } else {
                Some(100.0 * n as f64 / sites as f64)
            }
        };
        rows.push(ProminenceRow {
            entity: entity.clone(),
            year,
            distinct_domains_per_site_sum: sum,
            sites,
            per_site_average: if sites == 0 { 0.0 } else { sum as f64 / sites as f64 },
            pct_sites_increase: pct(up),
            pct_sites_decrease: pct(down),
            change_histogram: histogram,
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListSummaryRow {
    pub list_id: String,
    pub total_detections: usize,
    /// Mean signed time difference over all detections.
    pub mean_days: Option<f64>,
    /// Mean of the per-year means.
    pub mean_days_by_year: Option<f64>,
    pub n_reactive: usize,
    pub mean_reactive_days: Option<f64>,
    pub n_proactive: usize,
    pub mean_proactive_days: Option<f64>,
    pub n_censored: usize,
    pub mean_days_excl_censored: Option<f64>,
}

fn mean_i64(values: impl IntoIterator<Item = i64>) -> Option<f64> {
    let (mut sum, mut n) = (0i64, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum as f64 / n as f64)
}

/// One summary row from a list's detections across all years.
pub fn list_summary(list_id: &str, detections: &[DetectionRecord]) -> ListSummaryRow {
    let td = |d: &DetectionRecord| d.time_difference_days;
    let mut by_year: BTreeMap<i32, Vec<i64>> = BTreeMap::new();
    for d in detections {
        by_year.entry(d.year).or_default().push(td(d));
    }
    let year_means: Vec<f64> = by_year.values().filter_map(|v| mean_i64(v.iter().copied())).collect();
    ListSummaryRow {
        list_id: list_id.to_string(),
        total_detections: detections.len(),
        mean_days: mean_i64(detections.iter().map(td)),
        mean_days_by_year: (!year_means.is_empty()).then(|| year_means.iter().sum::<f64>() / year_means.len() as f64),
        n_reactive: detections.iter().filter(|d| td(d) > 0).count(),
        mean_reactive_days: mean_i64(detections.iter().map(td).filter(|t| *t > 0)),
        n_proactive: detections.iter().filter(|d| td(d) <= 0).count(),
        mean_proactive_days: mean_i64(detections.iter().map(td).filter(|t| *t <= 0)),
        n_censored: detections.iter().filter(|d| d.censored).count(),
        mean_days_excl_censored: mean_i64(detections.iter().filter(|d| !d.censored).map(td)),
    }
}

pub const DAY_BUCKET: i64 = 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeToListRow {
    pub list_id: String,
    /// Lower bound of a [`DAY_BUCKET`]-day bucket.
    pub day_bucket: i64,
    pub count: usize,
}

/// Histogram of time differences, censored detections omitted.
pub fn time_to_list_distribution(list_id: &str, detections: &[DetectionRecord]) -> Vec<TimeToListRow> {
    let mut buckets: BTreeMap<i64, usize> = BTreeMap::new();
    for d in detections.iter().filter(|d| !d.censored) {
        *buckets.entry(d.time_difference_days.div_euclid(DAY_BUCKET) * DAY_BUCKET).or_insert(0) += 1;
    }
    buckets
        .into_iter()
        .map(|(day_bucket, count)| TimeToListRow { list_id: list_id.to_string(), day_bucket, count })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisOptions {
    pub first_seen: FirstSeenMode,
    pub list_country: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { first_seen: FirstSeenMode::YearLocal, list_country: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analysis {
    pub churn: Vec<ChurnRow>,
    pub speed: Vec<SpeedRow>,
    pub prominence: Vec<ProminenceRow>,
    pub list_summary: Vec<ListSummaryRow>,
    pub time_to_list: Vec<TimeToListRow>,
    pub averages: Vec<AverageRow>,
    /// Per-list detections over all years, sorted.
    pub detections: Vec<DetectionRecord>,
}

/// Every metric row for the view's years.
pub fn analyze(view: &StoreView<'_>, opts: AnalysisOptions) -> Result<Analysis, StoreError> {
    let years: Vec<i32> = view.years().collect();
    let store = view.store();
    let lists: Vec<String> = store.list_ids().into_iter().collect();
    if lists.is_empty() {
        return Ok(Analysis::default());
    }
    let countries: Vec<String> = view.countries().into_iter().collect();
    let site_countries: BTreeMap<String, BTreeSet<String>> = view
        .observations(&SiteScope::All)
        .map(|r| (r.site.clone(), r.country_tags.iter().cloned().collect()))
        .collect();
    let site_years = view.site_year_domains(&SiteScope::All);

    let mut entities = vec![EntityKey::Global];
    entities.extend(lists.iter().map(|l| EntityKey::List(l.clone())));
    entities.extend(countries.iter().map(|c| EntityKey::Country(c.clone())));
    if opts.list_country {
        for l in &lists {
            entities.extend(countries.iter().map(|c| EntityKey::ListCountry { list: l.clone(), country: c.clone() }));
        }
    }

    // Detections per (selector, year) over all sites; scopes filter by site.
    let mut selectors: Vec<ListSelector> = vec![ListSelector::Union];
    selectors.extend(lists.iter().map(|l| ListSelector::Single(l.clone())));
    let mut detections: BTreeMap<(ListSelector, i32), Vec<DetectionRecord>> = BTreeMap::new();
    let mut universes: BTreeMap<ListSelector, BTreeSet<String>> = BTreeMap::new();
    for sel in &selectors {
        let timeline = store.timeline(sel)?;
        universes.insert(sel.clone(), timeline.domains().map(str::to_string).collect());
        for &y in &years {
            detections
                .insert((sel.clone(), y), view.detections_with(&timeline, y, sel, &SiteScope::All, opts.first_seen));
        }
    }

    let in_scope = |site: &str, scope: &SiteScope| match scope {
        SiteScope::All => true,
        SiteScope::Country(c) => site_countries.get(site).is_some_and(|cs| cs.contains(c)),
    };

    let mut out = Analysis::default();
    for entity in &entities {
        let sel = entity.selector();
        let scope = entity.scope();
        let universe = &universes[&sel];

        let mut sets: BTreeMap<i32, BTreeSet<&str>> = BTreeMap::new();
        let mut counts: BTreeMap<String, BTreeMap<i32, usize>> = BTreeMap::new();
        for (site, by_year) in site_years.iter().filter(|(s, _)| in_scope(s, &scope)) {
            let per_site = counts.entry(site.clone()).or_default();
            for (&y, domains) in by_year {
                let blocked: Vec<&str> = domains.iter().map(String::as_str).filter(|d| universe.contains(*d)).collect();
                per_site.insert(y, blocked.len());
                sets.entry(y).or_default().extend(blocked);
            }
        }
        let churn = churn_series(entity, &years, &sets);
        if let Some(first) = churn.first().map(|r| r.year) {
            for &y in years.iter().filter(|y| **y >= first) {
                let dets = detections[&(sel.clone(), y)].iter().filter(|d| in_scope(&d.site, &scope));
                out.speed.push(SpeedRow::new(entity.clone(), y, speed_raw(dets)));
            }
        }
        out.churn.extend(churn);
        out.prominence.extend(prominence(entity, &years, &counts));
    }
    normalize_scores(&mut out.speed);

    for l in &lists {
        let sel = ListSelector::Single(l.clone());
        let all: Vec<DetectionRecord> =
            years.iter().flat_map(|y| detections[&(sel.clone(), *y)].iter().cloned()).collect();
        out.list_summary.push(list_summary(l, &all));
        out.time_to_list.extend(time_to_list_distribution(l, &all));
        out.detections.extend(all);
    }

    for by in [AverageBy::Years, AverageBy::Countries, AverageBy::Both] {
        out.averages.extend(average_over(&out.churn, by));
        out.averages.extend(average_over(&out.speed, by));
    }
    Ok(out)
}
