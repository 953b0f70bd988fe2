//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use listchurn::archive::{HttpArchive, MementoClient, MementoRef, PageCapture, RetryPolicy, SkipReason, TargetDate};
use listchurn::blacklist::{BlacklistSnapshot, FormatKind};
use listchurn::fixture::{generate_corpus, LagSpec, ScenarioSpec, YearRange};
use listchurn::metrics::{
    analyze, normalize, normalize_scores, Analysis, AnalysisOptions, EntityKey, SpeedRaw, SpeedRow,
};
use listchurn::page::observe_page;
use listchurn::pipeline::{simulate, Pipeline, RunConfig, Stage};
use listchurn::report::{self, ReportKind};
use listchurn::store::{FirstSeenMode, ListRecord, ListSelector, ObservationRecord, SiteScope, Store};
use listchurn::{registrable_domain, SldMode, SuffixTable};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use support::http::{Reply, ScriptedServer};
use support::oracle;

const ORACLE_CORPORA: u64 = 200;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn data(rel: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

/// Scenario parameters spread over the allowed ranges by seed.
fn scenario(seed: u64) -> ScenarioSpec {
    let countries = ["au", "de", "in", "us"];
    ScenarioSpec {
        seed,
        n_sites: 3 + (seed as usize * 7) % 48,
        n_domains: 10 + (seed as usize * 37) % 191,
        years: YearRange { from: 2009, to: 2017 },
        churn_rate: (seed % 10) as f64 / 10.0,
        listing_lag_days: LagSpec { mean: (seed as i64 * 13) % 801 - 400, spread: (seed as i64 * 29) % 400 },
        n_lists: 1 + (seed as usize) % 4,
        countries: countries[..1 + (seed as usize / 3) % 4].iter().map(|c| c.to_string()).collect(),
        drop_rate: [0.0, 0.05, 0.3, 0.55][(seed % 4) as usize],
        benign_domains: (seed as usize) % 9,
        planted_targets: Vec::new(),
    }
}

fn analyzed(seed: u64) -> Result<(Store, Analysis, ScenarioSpec), String> {
    let spec = scenario(seed);
    let corpus = generate_corpus(&spec).map_err(|e| format!("seed {seed}: {e}"))?;
    let store = support::store_from(&corpus);
    let analysis = analyze(&store.view(spec.years.from..=spec.years.to), AnalysisOptions::default())
        .map_err(|e| format!("seed {seed}: {e}"))?;
    Ok((store, analysis, spec))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut discarded = 0;
    for seed in 0..ORACLE_CORPORA {
        let spec = scenario(seed);
        let corpus = generate_corpus(&spec).map_err(|e| format!("seed {seed}: {e}"))?;
        let store = support::store_from(&corpus);
        let view = store.view(spec.years.from..=spec.years.to);
        discarded += view.discarded_sites().len();
        let analysis = analyze(&view, AnalysisOptions::default()).map_err(|e| e.to_string())?;
        let expected = oracle::compute(&corpus.observations, &corpus.lists, spec.years.from, spec.years.to, true);
        if &expected.retained != view.retained_sites() {
            return Err(format!("seed {seed}: retained sites differ"));
        }
        support::compare(&analysis, &expected).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    let elapsed = start.elapsed();
    if elapsed > ORACLE_BUDGET {
        return Err(format!("took {elapsed:.1?}, budget {ORACLE_BUDGET:?}"));
    }
    Ok(format!("{ORACLE_CORPORA} corpora, {discarded} sites discarded, tol {:e}, {elapsed:.1?}", support::TOL))
}

fn first_year_defaults() -> Outcome {
    let mut entities = 0;
    for seed in 0..40 {
        let (_, a, _) = analyzed(seed)?;
        let mut first: BTreeMap<&EntityKey, (i32, f64, f64)> = BTreeMap::new();
        for r in &a.churn {
            let e = first.entry(&r.entity).or_insert((r.year, r.stability, r.diversity));
            if r.year < e.0 {
                *e = (r.year, r.stability, r.diversity);
            }
        }
        for (entity, (year, s, d)) in first {
            if s != 0.0 || d != 1.0 {
                return Err(format!("seed {seed} {entity} {year}: stability {s}, diversity {d}"));
            }
            entities += 1;
        }
    }
    Ok(format!("{entities} entity series checked"))
}

fn sportsbet_example() -> Outcome {
    let table = SuffixTable::bundled();
    let mode = SldMode::SuffixAware;
    let html = std::fs::read_to_string(data("sportsbet.html")).map_err(|e| e.to_string())?;
    let site = registrable_domain("www.sportsbet.com", table, mode).map_err(|e| e.to_string())?;
    let ts = Utc.with_ymd_and_hms(2012, 1, 5, 10, 0, 0).unwrap();
    let capture = PageCapture {
        site,
        target: TargetDate::new(2012, 1, 3),
        memento: MementoRef {
            original_url: "http://sportsbet.com/".into(),
            memento_url: "https://web.archive.org/web/20120105100000/http://sportsbet.com/".into(),
            memento_timestamp: ts,
            delta_days: 4,
            over_gap: false,
        },
        body: html,
        fetch_status: 200,
    };
    let obs = observe_page(&capture, table, mode);
    let hosts = std::fs::read_to_string(data("lists/hosts.txt")).map_err(|e| e.to_string())?;
    let date = NaiveDate::from_ymd_opt(2011, 6, 1).unwrap();
    let snapshot = BlacklistSnapshot::parse("hosts", date, &hosts, Some(FormatKind::Hosts), table, mode);

    let mut store = Store::in_memory();
    store.put_observation(ObservationRecord::from_observation(&obs, vec!["au".into()])).map_err(|e| e.to_string())?;
    store.put_list_snapshot(ListRecord::from(&snapshot)).map_err(|e| e.to_string())?;
    let view = store.view(2012..=2012);
    let dets = view
        .build_detections(2012, &ListSelector::Single("hosts".into()), &SiteScope::All, FirstSeenMode::YearLocal)
        .map_err(|e| e.to_string())?;
    let found: BTreeSet<&str> = dets.iter().map(|d| d.domain.as_str()).collect();
    if found != BTreeSet::from(["doubleclick.net"]) {
        return Err(format!("detections {found:?}, page third parties {:?}", obs.third_party_domains));
    }
    Ok(format!("third parties {}, detected {{doubleclick.net}}", obs.third_party_domains.len()))
}

fn tomshardware_example() -> Outcome {
    let counts = [4usize, 10, 6, 1, 5, 2, 0, 2, 1];
    let expected = ["", "+6:1", "-4:1", "-5:1", "+4:1", "-3:1", "-2:1", "+2:1", "-1:1"];
    let mut store = Store::in_memory();
    for (i, &n) in counts.iter().enumerate() {
        let year = 2009 + i as i32;
        store
            .put_observation(ObservationRecord {
                site: "tomshardware.com".into(),
                country_tags: vec!["us".into()],
                year,
                quarter: 1,
                memento_timestamp: Utc.with_ymd_and_hms(year, 2, 1, 0, 0, 0).unwrap(),
                domains: (0..n).map(|d| format!("tracker{d}.net")).collect(),
                memento_url: String::new(),
                delta_days: 0,
                over_gap: false,
            })
            .map_err(|e| e.to_string())?;
    }
    store
        .put_list_snapshot(ListRecord {
            list_id: "L".into(),
            capture_date: NaiveDate::from_ymd_opt(2008, 1, 1).unwrap(),
            domains: (0..10).map(|d| format!("tracker{d}.net")).collect(),
            source_format: FormatKind::DomainList,
            rule_count: 10,
            diagnostics: Default::default(),
        })
        .map_err(|e| e.to_string())?;
    let a = analyze(&store.view(2009..=2017), AnalysisOptions::default()).map_err(|e| e.to_string())?;
    let rows = report::rows(ReportKind::ChangeStats, &a);
    let header = ReportKind::ChangeStats.header();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let list_rows: Vec<&Vec<String>> = rows.iter().filter(|r| r[col("entity")] == "L").collect();
    if list_rows.len() != counts.len() {
        return Err(format!("{} change_stats rows for L", list_rows.len()));
    }
    for (i, row) in list_rows.iter().enumerate() {
        if row[col("histogram")] != expected[i] {
            return Err(format!(
                "{}: histogram {:?}, expected {:?}",
                row[col("year")],
                row[col("histogram")],
                expected[i]
            ));
        }
        let (up, down) = (&row[col("pct_increase")], &row[col("pct_decrease")]);
        let want = match expected[i].chars().next() {
            None => ("", ""),
            Some('+') => ("100", "0"),
            Some(_) => ("0", "100"),
        };
        if (up.as_str(), down.as_str()) != want {
            return Err(format!("{}: pct {up}/{down}, expected {want:?}", row[col("year")]));
        }
    }
    Ok("deltas +6,-4,-5,+4,-3,-2,+2,-1".into())
}

fn first_snapshot_rule() -> Outcome {
    let mut store = Store::in_memory();
    let obs = |site: &str, y: i32, m: u32, d: u32| ObservationRecord {
        site: site.into(),
        country_tags: vec!["de".into()],
        year: y,
        quarter: 1,
        memento_timestamp: Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap(),
        domains: BTreeSet::from(["tracker.net".to_string()]),
        memento_url: String::new(),
        delta_days: 0,
        over_gap: false,
    };
    // seen before the first snapshot, and on the same day
    store.put_observation(obs("early.com", 2012, 1, 10)).map_err(|e| e.to_string())?;
    store.put_observation(obs("sameday.com", 2012, 3, 1)).map_err(|e| e.to_string())?;
    store
        .put_list_snapshot(ListRecord {
            list_id: "L".into(),
            capture_date: NaiveDate::from_ymd_opt(2012, 3, 1).unwrap(),
            domains: BTreeSet::from(["tracker.net".to_string()]),
            source_format: FormatKind::Hosts,
            rule_count: 1,
            diagnostics: Default::default(),
        })
        .map_err(|e| e.to_string())?;
    let view = store.view(2012..=2012);
    let dets = view
        .build_detections(2012, &ListSelector::Single("L".into()), &SiteScope::All, FirstSeenMode::YearLocal)
        .map_err(|e| e.to_string())?;
    if dets.len() != 2 || dets.iter().any(|d| d.time_difference_days != 1 || !d.first_snapshot) {
        return Err(format!("{dets:?}"));
    }
    let mut first_snapshot = 0;
    for seed in 0..40 {
        let (_, a, _) = analyzed(seed)?;
        for d in a.detections.iter().filter(|d| d.first_snapshot) {
            if d.time_difference_days == 0 {
                return Err(format!("seed {seed}: zero time difference for {} on {}", d.domain, d.site));
            }
            first_snapshot += 1;
        }
    }
    Ok(format!("fixture td = 1; {first_snapshot} first-snapshot detections in corpora, none 0"))
}

fn retry_state_machine() -> Outcome {
    const MEMENTOS: usize = 6;
    let original = "http://sportsbet.com/";
    let target = TargetDate::new(2011, 1, 3);
    let site =
        registrable_domain("sportsbet.com", SuffixTable::bundled(), SldMode::SuffixAware).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for k in 0..=MEMENTOS {
        let server = ScriptedServer::start();
        let stamps: Vec<String> = (0..MEMENTOS).map(|i| format!("201101{:02}000000", 5 + 4 * i)).collect();
        let mut timemap = format!("<{original}>; rel=\"original\",\n");
        for (i, stamp) in stamps.iter().enumerate() {
            let path = format!("/web/{stamp}/{original}");
            let ts = chrono::NaiveDateTime::parse_from_str(stamp, "%Y%m%d%H%M%S").unwrap().and_utc();
            timemap.push_str(&format!("<{}{path}>; rel=\"memento\"; datetime=\"{}\",\n", server.base, ts.to_rfc2822()));
            let reply = if i < k {
                Reply::redirect(&format!("/web/20100101000000/{original}"))
            } else {
                Reply::ok(format!("<html><script src=\"http://ads{i}.tracker.net/a.js\"></script></html>"))
            };
            server.route(&path, reply);
        }
        server.route(&format!("/web/timemap/link/{original}"), Reply::ok(timemap));

        let policy = RetryPolicy { politeness_delay: Duration::ZERO, ..RetryPolicy::default() };
        let client = MementoClient::new(HttpArchive::new(Duration::from_secs(10), "acceptance"), &server.base, policy);
        let mut session = client.session();
        let result = session.crawl(&site, original, &[target]).pop().map(|(_, r)| r).ok_or("no result")?;
        let fetched = server.hits().iter().filter(|p| p.starts_with("/web/2011")).count();
        let outcome = match (&result, k) {
            (Ok(cap), k) if k <= 3 => {
                if !cap.memento.memento_url.contains(&stamps[k]) || fetched != k + 1 {
                    return Err(format!("k={k}: got {} after {fetched} fetches", cap.memento.memento_url));
                }
                "ok".to_string()
            }
            (Err(SkipReason::IntervalExhausted { tries: 4 }), k) if k >= 4 => {
                if fetched != 4 {
                    return Err(format!("k={k}: {fetched} memento fetches"));
                }
                "interval-exhausted".to_string()
            }
            (other, k) => return Err(format!("k={k}: {other:?}")),
        };
        summary.push(format!("k={k} {outcome}"));
    }

    // A site without any capture in one year is discarded everywhere.
    let mut store = Store::in_memory();
    for (site, years, domain) in [("kept.com", 2009..=2012, "a.net"), ("gappy.com", 2009..=2012, "only-gappy.net")] {
        for y in years {
            if site == "gappy.com" && y == 2011 {
                continue;
            }
            store
                .put_observation(ObservationRecord {
                    site: site.into(),
                    country_tags: vec!["au".into()],
                    year: y,
                    quarter: 2,
                    memento_timestamp: Utc.with_ymd_and_hms(y, 5, 1, 0, 0, 0).unwrap(),
                    domains: BTreeSet::from([domain.to_string()]),
                    memento_url: String::new(),
                    delta_days: 0,
                    over_gap: false,
                })
                .map_err(|e| e.to_string())?;
        }
    }
    store
        .put_list_snapshot(ListRecord {
            list_id: "L".into(),
            capture_date: NaiveDate::from_ymd_opt(2008, 6, 1).unwrap(),
            domains: BTreeSet::from(["a.net".to_string(), "only-gappy.net".to_string()]),
            source_format: FormatKind::DomainList,
            rule_count: 2,
            diagnostics: Default::default(),
        })
        .map_err(|e| e.to_string())?;
    let view = store.view(2009..=2012);
    let a = analyze(&view, AnalysisOptions::default()).map_err(|e| e.to_string())?;
    let leaked = view.retained_sites().contains("gappy.com")
        || a.churn.iter().any(|r| r.domains != 1)
        || a.detections.iter().any(|d| d.site == "gappy.com" || d.domain == "only-gappy.net")
        || a.prominence.iter().any(|r| r.sites != 1);
    if leaked {
        return Err("site with an empty year leaked into downstream sets".into());
    }
    Ok(format!("{}; empty-year site discarded", summary.join(", ")))
}

fn parser_fixtures() -> Outcome {
    let table = SuffixTable::bundled();
    let date = NaiveDate::from_ymd_opt(2014, 3, 1).unwrap();
    let mut notes = Vec::new();
    for (name, format) in
        [("hosts", FormatKind::Hosts), ("filter", FormatKind::FilterList), ("domains", FormatKind::DomainList)]
    {
        let text = std::fs::read_to_string(data(&format!("lists/{name}.txt"))).map_err(|e| e.to_string())?;
        let expected: BTreeSet<String> = std::fs::read_to_string(data(&format!("lists/{name}.expected")))
            .map_err(|e| e.to_string())?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        for hint in [Some(format), None] {
            let snap = BlacklistSnapshot::parse(name, date, &text, hint, table, SldMode::SuffixAware);
            if snap.source_format != format {
                return Err(format!("{name}: format {:?} with hint {hint:?}", snap.source_format));
            }
            let got: BTreeSet<String> = snap.domains.iter().map(|d| d.as_str().to_string()).collect();
            if got != expected {
                let missing: Vec<_> = expected.difference(&got).collect();
                let extra: Vec<_> = got.difference(&expected).collect();
                return Err(format!("{name}: missing {missing:?}, extra {extra:?}"));
            }
            let diag = snap.diagnostics;
            if hint.is_some() {
                if diag.rules < 20
                    || diag.comments == 0
                    || diag.malformed == 0
                    || diag.exceptions == 0
                    || diag.cosmetic == 0
                {
                    return Err(format!("{name}: fixture coverage {diag:?}"));
                }
                notes.push(format!("{name} {} domains/{} rules", got.len(), diag.rules));
            }
        }
    }
    Ok(notes.join(", "))
}

fn check_group(raw: &[f64], norm: &[f64]) -> Result<(), String> {
    let max = raw.iter().copied().fold(0.0, f64::max);
    if norm.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("out of range: {norm:?}"));
    }
    if max > 0.0 {
        if norm.iter().copied().fold(0.0, f64::max) != 1.0 {
            return Err(format!("max not 1: {norm:?}"));
        }
        for (r, n) in raw.iter().zip(norm) {
            if (*r == max) != (*n == 1.0) {
                return Err(format!("argmax not preserved: {raw:?} -> {norm:?}"));
            }
        }
    } else if norm.iter().any(|v| *v != 0.0) {
        return Err(format!("all-zero group normalized to {norm:?}"));
    }
    Ok(())
}

fn normalization() -> Outcome {
    let mut runner = TestRunner::new(Config { cases: 2000, failure_persistence: None, ..Config::default() });
    let values = prop::collection::vec(prop_oneof![Just(0.0), 0.0..1e6f64, 1e-9..1e-3f64, Just(7.5)], 1..40);
    runner
        .run(&values, |raw| {
            check_group(&raw, &normalize(&raw)).map_err(TestCaseError::fail)?;
            let mut rows: Vec<SpeedRow> = raw
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let entity =
                        if i % 2 == 0 { EntityKey::List(format!("l{i}")) } else { EntityKey::Country(format!("c{i}")) };
                    SpeedRow::new(
                        entity,
                        2010,
                        SpeedRaw { reactive_raw: *v, proactive_raw: v / 3.0, ..SpeedRaw::default() },
                    )
                })
                .collect();
            normalize_scores(&mut rows);
            for parity in 0..2 {
                let group: Vec<&SpeedRow> =
                    rows.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, r)| r).collect();
                let r: Vec<f64> = group.iter().map(|r| r.reactive_raw).collect();
                let n: Vec<f64> = group.iter().map(|r| r.reactive).collect();
                check_group(&r, &n).map_err(TestCaseError::fail)?;
                let r: Vec<f64> = group.iter().map(|r| r.proactive_raw).collect();
                let n: Vec<f64> = group.iter().map(|r| r.proactive).collect();
                check_group(&r, &n).map_err(TestCaseError::fail)?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let mut groups = 0;
    for seed in 0..40 {
        let (_, a, _) = analyzed(seed)?;
        let mut by_kind: BTreeMap<_, Vec<&SpeedRow>> = BTreeMap::new();
        for r in &a.speed {
            by_kind.entry(r.entity.kind()).or_default().push(r);
        }
        for rows in by_kind.values() {
            let raw: Vec<f64> = rows.iter().map(|r| r.reactive_raw).collect();
            let norm: Vec<f64> = rows.iter().map(|r| r.reactive).collect();
            check_group(&raw, &norm).map_err(|e| format!("seed {seed}: {e}"))?;
            let raw: Vec<f64> = rows.iter().map(|r| r.proactive_raw).collect();
            let norm: Vec<f64> = rows.iter().map(|r| r.proactive).collect();
            check_group(&raw, &norm).map_err(|e| format!("seed {seed}: {e}"))?;
            groups += 1;
        }
    }
    Ok(format!("2000 random groups, {groups} corpus groups"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = ScenarioSpec::small(11);
    spec.drop_rate = 0.1;
    let config_path = simulate(&spec, &tmp.path().join("sim")).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, parallel) in [("run1", 1), ("run2", 4)] {
        let mut config = RunConfig::load(&config_path).map_err(|e| e.to_string())?;
        config.out = tmp.path().join(run);
        config.max_parallel = parallel;
        let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
        pipeline.run(Stage::All).map_err(|e| e.to_string())?;
        let mut files = BTreeMap::new();
        for kind in ReportKind::ALL {
            let bytes = std::fs::read(pipeline.reports_dir().join(kind.csv_file())).map_err(|e| e.to_string())?;
            files.insert(kind.csv_file(), bytes);
        }
        outputs.push(files);
    }
    for (name, bytes) in &outputs[0] {
        if outputs[1].get(name) != Some(bytes) {
            return Err(format!("{name} differs between runs"));
        }
    }
    let total: usize = outputs[0].values().map(Vec::len).sum();
    Ok(format!("{} report CSVs identical ({total} bytes)", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("first-year churn defaults", first_year_defaults),
        ("sportsbet/doubleclick detection", sportsbet_example),
        ("tomshardware change signs", tomshardware_example),
        ("first-snapshot time difference", first_snapshot_rule),
        ("retry state machine and site discard", retry_state_machine),
        ("parser fixtures", parser_fixtures),
        ("speed normalization", normalization),
        ("pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2?}]", started.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{:.2?}]", started.elapsed());
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
