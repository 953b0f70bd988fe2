//! Longitudinal analysis of ad/tracker blacklists.
//!
//! The crate reconstructs how third-party ad and tracking (a&t) domains on
//! popular websites evolved over time, and how quickly blacklists picked them
//! up, from archived page and blacklist snapshots:
//!
//! * [`domain`] and [`suffix`] reduce URLs to registrable domains.
//! * [`blacklist`] parses hosts files, filter lists and domain lists.
//! * [`archive`] resolves and fetches dated snapshots through the Memento
//!   protocol with a retry policy and an on-disk response cache.
//! * [`page`] extracts third-party script domains from captured HTML.
//! * [`store`] persists observations and list snapshots and derives
//!   detection records.
//! * [`metrics`] computes stability, diversity, reactive and proactive scores
//!   and the prominence aggregations.
//! * [`fixture`] generates synthetic corpora with known metric values.
//! * [`report`] and [`pipeline`] drive the end-to-end run and emit CSVs.

pub mod archive;
pub mod blacklist;
pub mod domain;
pub mod fixture;
pub mod metrics;
pub mod page;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod suffix;

pub use blacklist::{BlacklistSnapshot, FormatKind, ParsedList};
pub use domain::{parse_url, registrable_domain, RegistrableDomain, SldMode, UrlParts};
pub use suffix::SuffixTable;
