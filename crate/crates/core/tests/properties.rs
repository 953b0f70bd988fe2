//! Property tests over the public API.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Duration;

use chrono::{NaiveDate, TimeZone, Utc};
use listchurn::archive::{
    Archive, ArchiveError, ArchiveResponse, MementoClient, MementoRef, PageCapture, RetryPolicy, SkipReason, TargetDate,
};
use listchurn::fixture::{generate_corpus, ScenarioSpec};
use listchurn::page::observe_page;
use listchurn::store::{read_detections, write_detections, DetectionRecord, ListRecord, ObservationRecord, Store};
use listchurn::{registrable_domain, FormatKind, SldMode, SuffixTable};
use proptest::prelude::*;

/// Replies from a fixed script, one entry per memento URL `m{i}`.
struct Scripted {
    script: Vec<Option<u16>>,
    calls: Mutex<Vec<String>>,
}

impl Archive for Scripted {
    fn get(&self, url: &str) -> Result<ArchiveResponse, ArchiveError> {
        self.calls.lock().unwrap().push(url.to_string());
        let i: usize = url.trim_start_matches('m').parse().unwrap();
        match self.script[i] {
            None => Err(ArchiveError::ArchiveUnreachable("reset".into())),
            Some(s) if (300..400).contains(&s) => Ok(ArchiveResponse::redirect(s, "elsewhere")),
            Some(s) => Ok(ArchiveResponse { status: s, location: None, body: b"<html></html>".to_vec() }),
        }
    }
}

fn candidates(n: usize) -> Vec<MementoRef> {
    (0..n)
        .map(|i| MementoRef {
            original_url: "http://example.com/".into(),
            memento_url: format!("m{i}"),
            memento_timestamp: Utc.with_ymd_and_hms(2012, 1, 2 + i as u32, 0, 0, 0).unwrap(),
            delta_days: 1 + i as i64,
            over_gap: false,
        })
        .collect()
}

fn status() -> impl Strategy<Value = Option<u16>> {
    prop_oneof![Just(Some(200)), Just(Some(301)), Just(Some(302)), Just(Some(404)), Just(Some(503)), Just(None)]
}

proptest! {
    #[test]
    fn attempts_never_exceed_the_limit(script in prop::collection::vec(status(), 0..10), max_tries in 1u32..6) {
        let archive = Scripted { script: script.clone(), calls: Mutex::new(Vec::new()) };
        let policy = RetryPolicy { max_tries_per_interval: max_tries, politeness_delay: Duration::ZERO, ..RetryPolicy::default() };
        let client = MementoClient::new(&archive, "https://archive.invalid", policy);
        let site = registrable_domain("example.com", SuffixTable::bundled(), SldMode::SuffixAware).unwrap();
        let result = client.session().fetch_snapshot(&site, &TargetDate::new(2012, 1, 3), &candidates(script.len()));
        let calls = archive.calls.lock().unwrap().len();
        prop_assert!(calls as u32 <= max_tries);

        let window = &script[..script.len().min(max_tries as usize)];
        match window.iter().position(|s| *s == Some(200)) {
            Some(i) => {
                let capture = result.unwrap();
                prop_assert_eq!(capture.memento.memento_url, format!("m{i}"));
                prop_assert_eq!(calls, i + 1);
            }
            None if script.is_empty() => prop_assert_eq!(result, Err(SkipReason::NoMemento)),
            None if window.iter().all(Option::is_none) => {
                let transport = matches!(result, Err(SkipReason::TransportFailed { .. }));
                prop_assert!(transport, "{:?}", result)
            }
            None => prop_assert_eq!(result, Err(SkipReason::IntervalExhausted { tries: window.len() as u32 })),
        }
    }

    #[test]
    fn a_site_never_counts_as_its_own_third_party(
        hosts in prop::collection::vec(
            prop_oneof![
                Just("www.shop.co.uk"), Just("static.shop.co.uk"), Just("shop.co.uk"), Just("SHOP.CO.UK"),
                Just("ads.tracker.com"), Just("cdn.other.co.uk"), Just("10.0.0.1"), Just("bad..host"),
            ],
            0..12,
        )
    ) {
        let table = SuffixTable::bundled();
        let site = registrable_domain("www.shop.co.uk", table, SldMode::SuffixAware).unwrap();
        let body: String = hosts.iter().map(|h| format!("<script src=\"http://{h}/x.js\"></script>\n")).collect();
        let capture = PageCapture {
            site: site.clone(),
            target: TargetDate::new(2012, 1, 3),
            memento: candidates(1).remove(0),
            body,
            fetch_status: 200,
        };
        let obs = observe_page(&capture, table, SldMode::SuffixAware);
        prop_assert!(!obs.third_party_domains.contains(&site));
        for d in &obs.third_party_domains {
            prop_assert_eq!(registrable_domain(d.as_str(), table, SldMode::SuffixAware).unwrap(), d.clone());
        }
    }

    #[test]
    fn detections_round_trip(records in prop::collection::vec(
        ("[a-z]{1,8}\\.(com|net)", "[a-z]{1,8}\\.org", 2009i32..2018, 0i64..4000, 0i64..4000, any::<bool>()),
        0..30,
    )) {
        let base = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap();
        let recs: Vec<DetectionRecord> = records
            .into_iter()
            .map(|(domain, site, year, w, l, first)| DetectionRecord {
                domain,
                site,
                year,
                web_first_seen: base + chrono::Duration::days(w),
                list_id: "easylist".into(),
                list_first_seen: base + chrono::Duration::days(l),
                time_difference_days: l - w,
                first_snapshot: first,
                censored: first && w < l,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.jsonl");
        write_detections(&path, &recs).unwrap();
        prop_assert_eq!(read_detections(&path).unwrap(), recs);
    }
}

#[test]
fn store_records_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&ScenarioSpec::small(3)).unwrap();
    {
        let mut store = Store::open(dir.path()).unwrap();
        for o in &corpus.observations {
            store.put_observation(o.clone()).unwrap();
        }
        for l in &corpus.lists {
            store.put_list_snapshot(l.clone()).unwrap();
        }
    }
    let store = Store::open(dir.path()).unwrap();
    let mut obs: Vec<ObservationRecord> = corpus.observations.clone();
    obs.sort_by_key(|o| o.key());
    assert_eq!(store.observations().cloned().collect::<Vec<_>>(), obs);
    let mut lists: Vec<ListRecord> = corpus.lists.clone();
    lists.sort_by_key(|l| l.key());
    assert_eq!(store.list_snapshots().cloned().collect::<Vec<_>>(), lists);
}

#[test]
fn corpus_generation_is_seed_stable() {
    let json = |seed| {
        let c = generate_corpus(&ScenarioSpec::small(seed)).unwrap();
        (serde_json::to_string(&c.observations).unwrap(), serde_json::to_string(&c.lists).unwrap())
    };
    assert_eq!(json(9), json(9));
    assert_ne!(json(9), json(10));
}

#[test]
fn hosts_and_domain_lists_agree_on_the_same_hosts() {
    let table = SuffixTable::bundled();
    let hosts: Vec<&str> = vec!["ad.doubleclick.net", "a.b.example.co.uk", "x.tracker.io", "pixel.blogspot.com"];
    let as_hosts: String = hosts.iter().map(|h| format!("0.0.0.0 {h}\n")).collect();
    let as_list: String = hosts.iter().map(|h| format!("{h}\n")).collect();
    let date = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap();
    let a = listchurn::BlacklistSnapshot::parse("a", date, &as_hosts, None, table, SldMode::SuffixAware);
    let b = listchurn::BlacklistSnapshot::parse("b", date, &as_list, None, table, SldMode::SuffixAware);
    assert_eq!(a.source_format, FormatKind::Hosts);
    assert_eq!(b.source_format, FormatKind::DomainList);
    assert_eq!(a.domains, b.domains);
    let expected: BTreeSet<&str> = ["doubleclick.net", "example.co.uk", "tracker.io", "blogspot.com"].into();
    assert_eq!(a.domains.iter().map(|d| d.as_str()).collect::<BTreeSet<_>>(), expected);
}
