//! Brute-force reference metrics computed straight from raw records.
//!
//! Shares no code with the library beyond the record types. Everything is
//! recomputed with plain loops over observations and list snapshots.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use listchurn::store::{ListRecord, ObservationRecord};

/// (kind, name) with kind one of global, list, country, list-country.
pub type Entity = (String, String);

#[derive(Debug, Clone)]
pub struct Churn {
    pub stability: f64,
    pub diversity: f64,
}

#[derive(Debug, Clone)]
pub struct Speed {
    pub reactive: f64,
    pub proactive: f64,
    pub reactive_raw: f64,
    pub proactive_raw: f64,
    pub n_reactive: usize,
    pub n_proactive: usize,
    pub mean_reactive_days: Option<f64>,
    pub mean_proactive_days: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Prominence {
    pub sum: usize,
    pub sites: usize,
    pub avg: f64,
    pub pct_up: Option<f64>,
    pub pct_down: Option<f64>,
    pub histogram: BTreeMap<i64, usize>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub total: usize,
    pub mean_days: Option<f64>,
    pub n_reactive: usize,
    pub mean_reactive_days: Option<f64>,
    pub n_proactive: usize,
    pub mean_proactive_days: Option<f64>,
    pub n_censored: usize,
}

#[derive(Debug, Default)]
pub struct Expected {
    pub churn: BTreeMap<(Entity, i32), Churn>,
    pub speed: BTreeMap<(Entity, i32), Speed>,
    pub prominence: BTreeMap<(Entity, i32), Prominence>,
    pub summary: BTreeMap<String, Summary>,
    pub retained: BTreeSet<String>,
}

struct Det {
    td: i64,
    censored: bool,
}

fn mean(v: &[i64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<i64>() as f64 / v.len() as f64)
    }
}

/// Earliest capture date per domain and the first capture date, for one
/// list or (with `None`) all lists pooled.
struct Listing<'a> {
    first: BTreeMap<&'a str, NaiveDate>,
    first_capture: Option<NaiveDate>,
}

fn listing<'a>(lists: &'a [ListRecord], list: Option<&str>) -> Listing<'a> {
    let mut first: BTreeMap<&str, NaiveDate> = BTreeMap::new();
    let mut first_capture = None;
    for snap in lists.iter().filter(|l| list.is_none_or(|id| l.list_id == id)) {
        if first_capture.is_none_or(|d| snap.capture_date < d) {
            first_capture = Some(snap.capture_date);
        }
        for d in &snap.domains {
            let e = first.entry(d.as_str()).or_insert(snap.capture_date);
            if snap.capture_date < *e {
                *e = snap.capture_date;
            }
        }
    }
    Listing { first, first_capture }
}

/// Detections for one list and year, restricted to `sites`.
fn detections(
    by_site: &BTreeMap<&str, Vec<&ObservationRecord>>,
    listing: &Listing<'_>,
    year: i32,
    sites: &BTreeSet<String>,
) -> Vec<Det> {
    let mut out = Vec::new();
    for site in sites {
        let mut web: BTreeMap<&str, NaiveDate> = BTreeMap::new();
        for o in by_site[site.as_str()].iter().filter(|o| o.year == year) {
            for d in &o.domains {
                let day = o.memento_timestamp.date_naive();
                let e = web.entry(d.as_str()).or_insert(day);
                if day < *e {
                    *e = day;
                }
            }
        }
        for (d, web_first) in web {
            let Some(&listed) = listing.first.get(d) else { continue };
            let in_first = Some(listed) == listing.first_capture;
            let raw = listed.signed_duration_since(web_first).num_days();
            let td = if in_first && raw >= 0 { 1 } else { raw };
            out.push(Det { td, censored: in_first && web_first < listed });
        }
    }
    out
}

pub fn compute(
    observations: &[ObservationRecord],
    lists: &[ListRecord],
    from: i32,
    to: i32,
    list_country: bool,
) -> Expected {
    let years: Vec<i32> = (from..=to).collect();
    let mut exp = Expected::default();

    let all_sites: BTreeSet<String> = observations.iter().map(|o| o.site.clone()).collect();
    for s in &all_sites {
        if years.iter().all(|y| observations.iter().any(|o| &o.site == s && o.year == *y)) {
            exp.retained.insert(s.clone());
        }
    }
    let obs: Vec<&ObservationRecord> =
        observations.iter().filter(|o| o.year >= from && o.year <= to && exp.retained.contains(&o.site)).collect();
    let list_ids: BTreeSet<String> = lists.iter().map(|l| l.list_id.clone()).collect();
    if list_ids.is_empty() {
        return exp;
    }
    let mut by_site: BTreeMap<&str, Vec<&ObservationRecord>> = BTreeMap::new();
    for o in &obs {
        by_site.entry(o.site.as_str()).or_default().push(o);
    }
    let countries: BTreeSet<String> = obs.iter().flat_map(|o| o.country_tags.iter().cloned()).collect();
    let sites_in = |c: &str| -> BTreeSet<String> {
        obs.iter().filter(|o| o.country_tags.iter().any(|t| t == c)).map(|o| o.site.clone()).collect()
    };

    let mut entities: Vec<(Entity, Option<String>, BTreeSet<String>)> = Vec::new();
    entities.push((("global".into(), "global".into()), None, exp.retained.clone()));
    for l in &list_ids {
        entities.push((("list".into(), l.clone()), Some(l.clone()), exp.retained.clone()));
    }
    for c in &countries {
        entities.push((("country".into(), c.clone()), None, sites_in(c)));
    }
    if list_country {
        for l in &list_ids {
            for c in &countries {
                entities.push((("list-country".into(), format!("{l}@{c}")), Some(l.clone()), sites_in(c)));
            }
        }
    }

    let mut raw_speed: Vec<((Entity, i32), Speed)> = Vec::new();
    for (entity, list, sites) in &entities {
        let listed = listing(lists, list.as_deref());
        let year_set = |y: i32| -> BTreeSet<&String> {
            obs.iter()
                .filter(|o| o.year == y && sites.contains(&o.site))
                .flat_map(|o| o.domains.iter())
                .filter(|d| listed.first.contains_key(d.as_str()))
                .collect()
        };

        // churn
        let mut started = false;
        let mut prev: BTreeSet<&String> = BTreeSet::new();
        let mut history: BTreeSet<&String> = BTreeSet::new();
        let mut first_year = None;
        for &y in &years {
            let cur = year_set(y);
            if !started {
                if cur.is_empty() {
                    continue;
                }
                started = true;
                first_year = Some(y);
                exp.churn.insert((entity.clone(), y), Churn { stability: 0.0, diversity: 1.0 });
            } else {
                let inter = cur.iter().filter(|d| prev.contains(*d)).count();
                let union: BTreeSet<&String> = cur.iter().chain(prev.iter()).copied().collect();
                let stability = if union.is_empty() { 0.0 } else { inter as f64 / union.len() as f64 };
                let old = cur.iter().filter(|d| history.contains(*d)).count();
                let diversity = if cur.is_empty() { 0.0 } else { (cur.len() - old) as f64 / cur.len() as f64 };
                exp.churn.insert((entity.clone(), y), Churn { stability, diversity });
            }
            history.extend(cur.iter().copied());
            prev = cur;
        }

        // speed
        if let Some(first_year) = first_year {
            for &y in years.iter().filter(|y| **y >= first_year) {
                let dets = detections(&by_site, &listed, y, sites);
                let r: Vec<i64> = dets.iter().map(|d| d.td).filter(|t| *t > 0).collect();
                let p: Vec<i64> = dets.iter().map(|d| d.td).filter(|t| *t <= 0).collect();
                let mr = mean(&r);
                let mp = mean(&p);
                raw_speed.push((
                    (entity.clone(), y),
                    Speed {
                        reactive: 0.0,
                        proactive: 0.0,
                        reactive_raw: mr.map_or(0.0, |m| r.len() as f64 / m),
                        proactive_raw: mp.map_or(0.0, |m| p.len() as f64 * m.abs()),
                        n_reactive: r.len(),
                        n_proactive: p.len(),
                        mean_reactive_days: mr,
                        mean_proactive_days: mp,
                    },
                ));
            }
        }

        // prominence
        let count = |s: &String, y: i32| -> i64 {
            let set: BTreeSet<&String> = by_site[s.as_str()]
                .iter()
                .filter(|o| o.year == y)
                .flat_map(|o| o.domains.iter())
                .filter(|d| listed.first.contains_key(d.as_str()))
                .collect();
            set.len() as i64
        };
        for (i, &y) in years.iter().enumerate() {
            let sum: i64 = sites.iter().map(|s| count(s, y)).sum();
            let n = sites.len();
            let mut histogram = BTreeMap::new();
            let (mut up, mut down) = (0, 0);
            if i > 0 {
                for s in sites {
                    let delta = count(s, y) - count(s, years[i - 1]);
                    if delta != 0 {
                        *histogram.entry(delta).or_insert(0) += 1;
                    }
                    up += (delta > 0) as usize;
                    down += (delta < 0) as usize;
                }
            }
            let pct = |k: usize| {
                if i == 0 {
                    None
                } else if n == 0 {
                    Some(0.0)
                } else {
                    Some(k as f64 * 100.0 / n as f64)
                }
            };
            exp.prominence.insert(
                (entity.clone(), y),
                Prominence {
                    sum: sum as usize,
                    sites: n,
                    avg: if n == 0 { 0.0 } else { sum as f64 / n as f64 },
                    pct_up: pct(up),
                    pct_down: pct(down),
                    histogram,
                },
            );
        }
    }

    // normalization by entity kind
    let kinds: BTreeSet<String> = raw_speed.iter().map(|((e, _), _)| e.0.clone()).collect();
    for kind in kinds {
        let group: Vec<usize> = (0..raw_speed.len()).filter(|i| raw_speed[*i].0 .0 .0 == kind).collect();
        let max_r = group.iter().map(|i| raw_speed[*i].1.reactive_raw).fold(0.0, f64::max);
        let max_p = group.iter().map(|i| raw_speed[*i].1.proactive_raw).fold(0.0, f64::max);
        for i in group {
            let s = &mut raw_speed[i].1;
            s.reactive = if max_r > 0.0 { s.reactive_raw / max_r } else { 0.0 };
            s.proactive = if max_p > 0.0 { s.proactive_raw / max_p } else { 0.0 };
        }
    }
    exp.speed = raw_speed.into_iter().collect();

    // list summaries over all years
    for l in &list_ids {
        let listed = listing(lists, Some(l));
        let dets: Vec<Det> = years.iter().flat_map(|y| detections(&by_site, &listed, *y, &exp.retained)).collect();
        let tds: Vec<i64> = dets.iter().map(|d| d.td).collect();
        let r: Vec<i64> = tds.iter().copied().filter(|t| *t > 0).collect();
        let p: Vec<i64> = tds.iter().copied().filter(|t| *t <= 0).collect();
        exp.summary.insert(
            l.clone(),
            Summary {
                total: dets.len(),
                mean_days: mean(&tds),
                n_reactive: r.len(),
                mean_reactive_days: mean(&r),
                n_proactive: p.len(),
                mean_proactive_days: mean(&p),
                n_censored: dets.iter().filter(|d| d.censored).count(),
            },
        );
    }
    exp
}
