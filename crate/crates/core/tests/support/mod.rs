#![allow(dead_code)]

pub mod http;
pub mod oracle;

/// Relative tolerance for comparing metric values.
pub const TOL: f64 = 1e-12;

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * 1f64.max(a.abs()).max(b.abs())
}

pub fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => close(a, b),
        _ => false,
    }
}

use std::collections::BTreeSet;

use listchurn::fixture::Corpus;
use listchurn::metrics::{Analysis, EntityKey};
use listchurn::store::Store;

pub fn entity(e: &EntityKey) -> oracle::Entity {
    (e.kind().to_string(), e.to_string())
}

pub fn store_from(corpus: &Corpus) -> Store {
    let mut store = Store::in_memory();
    for o in &corpus.observations {
        store.put_observation(o.clone()).expect("observation");
    }
    for l in &corpus.lists {
        store.put_list_snapshot(l.clone()).expect("list");
    }
    store
}

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Field-by-field comparison of library output against the oracle.
pub fn compare(a: &Analysis, exp: &oracle::Expected) -> Result<(), String> {
    check!(a.churn.len() == exp.churn.len(), "churn rows {} vs {}", a.churn.len(), exp.churn.len());
    for r in &a.churn {
        let key = (entity(&r.entity), r.year);
        let e = exp.churn.get(&key).ok_or_else(|| format!("unexpected churn row {key:?}"))?;
        check!(close(r.stability, e.stability), "{key:?} stability {} vs {}", r.stability, e.stability);
        check!(close(r.diversity, e.diversity), "{key:?} diversity {} vs {}", r.diversity, e.diversity);
    }

    check!(a.speed.len() == exp.speed.len(), "speed rows {} vs {}", a.speed.len(), exp.speed.len());
    for r in &a.speed {
        let key = (entity(&r.entity), r.year);
        let e = exp.speed.get(&key).ok_or_else(|| format!("unexpected speed row {key:?}"))?;
        check!(r.n_reactive == e.n_reactive && r.n_proactive == e.n_proactive, "{key:?} counts");
        check!(close(r.reactive_raw, e.reactive_raw), "{key:?} reactive_raw {} vs {}", r.reactive_raw, e.reactive_raw);
        check!(
            close(r.proactive_raw, e.proactive_raw),
            "{key:?} proactive_raw {} vs {}",
            r.proactive_raw,
            e.proactive_raw
        );
        check!(close(r.reactive, e.reactive), "{key:?} reactive {} vs {}", r.reactive, e.reactive);
        check!(close(r.proactive, e.proactive), "{key:?} proactive {} vs {}", r.proactive, e.proactive);
        check!(close_opt(r.mean_reactive_days, e.mean_reactive_days), "{key:?} mean_reactive_days");
        check!(close_opt(r.mean_proactive_days, e.mean_proactive_days), "{key:?} mean_proactive_days");
    }

    check!(
        a.prominence.len() == exp.prominence.len(),
        "prominence rows {} vs {}",
        a.prominence.len(),
        exp.prominence.len()
    );
    for r in &a.prominence {
        let key = (entity(&r.entity), r.year);
        let e = exp.prominence.get(&key).ok_or_else(|| format!("unexpected prominence row {key:?}"))?;
        check!(r.distinct_domains_per_site_sum == e.sum && r.sites == e.sites, "{key:?} sum/sites");
        check!(close(r.per_site_average, e.avg), "{key:?} per_site_average");
        check!(close_opt(r.pct_sites_increase, e.pct_up), "{key:?} pct_increase");
        check!(close_opt(r.pct_sites_decrease, e.pct_down), "{key:?} pct_decrease");
        check!(r.change_histogram == e.histogram, "{key:?} histogram");
    }

    let ids: BTreeSet<&String> = a.list_summary.iter().map(|r| &r.list_id).collect();
    check!(ids.len() == exp.summary.len(), "list_summary rows");
    for r in &a.list_summary {
        let e = exp.summary.get(&r.list_id).ok_or_else(|| format!("unexpected list {}", r.list_id))?;
        let id = &r.list_id;
        check!(r.total_detections == e.total, "{id} total {} vs {}", r.total_detections, e.total);
        check!(r.n_reactive == e.n_reactive && r.n_proactive == e.n_proactive, "{id} reactive/proactive counts");
        check!(r.n_censored == e.n_censored, "{id} censored");
        check!(close_opt(r.mean_days, e.mean_days), "{id} mean_days");
        check!(close_opt(r.mean_reactive_days, e.mean_reactive_days), "{id} mean_reactive_days");
        check!(close_opt(r.mean_proactive_days, e.mean_proactive_days), "{id} mean_proactive_days");
    }
    Ok(())
}
