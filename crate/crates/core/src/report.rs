//! CSV report tables and their JSON schema sidecars.
//!
//! Column order is fixed per kind. Missing values (a mean over no
//! detections, a change percentage in an entity's first year) are empty
//! cells. Floats use the shortest representation that round-trips.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metrics::{Analysis, AverageRow, ChurnRow, ListSummaryRow, ProminenceRow, SpeedRow, TimeToListRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportKind {
    AnnualProminence,
    ChangeStats,
    Churn,
    Speed,
    ListSummary,
    TimeToListDistribution,
    Averages,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Integer,
    Number,
    Boolean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Column {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    /// Whether the cell may be empty.
    pub nullable: bool,
    pub description: &'static str,
}

const fn col(name: &'static str, ty: ColumnType, description: &'static str) -> Column {
    Column { name, ty, nullable: false, description }
}

const fn opt(name: &'static str, ty: ColumnType, description: &'static str) -> Column {
    Column { name, ty, nullable: true, description }
}

use ColumnType::{Boolean, Integer, Number, String as Text};

const ENTITY_KIND: Column = col("entity_kind", Text, "list, country, global or list-country");
const ENTITY: Column = col("entity", Text, "list id, country code, `global`, or `list@country`");
const YEAR: Column = col("year", Integer, "calendar year");

const ANNUAL_PROMINENCE: &[Column] = &[
    ENTITY_KIND,
    ENTITY,
    YEAR,
    col("sum", Integer, "sum over sites of distinct blocked domains per site"),
    col("sites", Integer, "sites in scope"),
    col("per_site_avg", Number, "sum / sites"),
];

const CHANGE_STATS: &[Column] = &[
    ENTITY_KIND,
    ENTITY,
    YEAR,
    opt("pct_increase", Number, "percent of sites whose count rose since the previous year"),
    opt("pct_decrease", Number, "percent of sites whose count fell since the previous year"),
    col("histogram", Text, "`delta:count` pairs separated by `;`, ascending by delta"),
];

const CHURN: &[Column] = &[
    ENTITY_KIND,
    ENTITY,
    YEAR,
    col("stability", Number, "Jaccard similarity with the previous year's set"),
    col("diversity", Number, "share of the year's domains not seen in earlier years"),
    col("degenerate", Boolean, "the year's set is empty (diversity reported as 0)"),
    col("domains", Integer, "size of the year's set"),
];

const SPEED: &[Column] = &[
    ENTITY_KIND,
    ENTITY,
    YEAR,
    col("reactive", Number, "reactive score normalized within the entity kind"),
    col("proactive", Number, "proactive score normalized within the entity kind"),
    col("reactive_raw", Number, "n_reactive / mean_reactive_days"),
    col("proactive_raw", Number, "n_proactive * |mean_proactive_days|"),
    opt("mean_reactive_days", Number, "mean positive time difference"),
    opt("mean_proactive_days", Number, "mean non-positive time difference"),
    col("n_reactive", Integer, "reactive (site, domain) pairs"),
    col("n_proactive", Integer, "proactive (site, domain) pairs"),
];

const LIST_SUMMARY: &[Column] = &[
    col("list_id", Text, "blacklist id"),
    col("total_detections", Integer, "(site, domain, year) detections"),
    opt("mean_days", Number, "mean time difference over all detections"),
    col("n_reactive", Integer, "detections with positive time difference"),
    opt("mean_reactive_days", Number, "mean over reactive detections"),
    col("n_proactive", Integer, "detections with non-positive time difference"),
    opt("mean_proactive_days", Number, "mean over proactive detections"),
    opt("mean_days_by_year", Number, "mean of per-year mean time differences"),
    col("n_censored", Integer, "detections seen on the web before the list's first snapshot"),
    opt("mean_days_excl_censored", Number, "mean time difference without censored detections"),
];

const TIME_TO_LIST: &[Column] = &[
    col("list_id", Text, "blacklist id"),
    col("day_bucket", Integer, "lower bound of a 30-day time-difference bucket"),
    col("count", Integer, "uncensored detections in the bucket"),
];

const AVERAGES: &[Column] = &[
    col("by", Text, "years, countries or both"),
    ENTITY_KIND,
    col("group", Text, "entity, list, or `*` for all countries"),
    opt("year", Integer, "year, empty when averaged over years"),
    col("field", Text, "averaged score"),
    col("mean", Number, "mean over existing cells"),
    col("cells", Integer, "cells averaged"),
];

impl ReportKind {
    pub const ALL: [ReportKind; 7] = [
        ReportKind::AnnualProminence,
        ReportKind::ChangeStats,
        ReportKind::Churn,
        ReportKind::Speed,
        ReportKind::ListSummary,
        ReportKind::TimeToListDistribution,
        ReportKind::Averages,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::AnnualProminence => "annual_prominence",
            ReportKind::ChangeStats => "change_stats",
            ReportKind::Churn => "churn",
            ReportKind::Speed => "speed",
            ReportKind::ListSummary => "list_summary",
            ReportKind::TimeToListDistribution => "time_to_list_distribution",
            ReportKind::Averages => "averages",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn columns(self) -> &'static [Column] {
        match self {
            ReportKind::AnnualProminence => ANNUAL_PROMINENCE,
            ReportKind::ChangeStats => CHANGE_STATS,
            ReportKind::Churn => CHURN,
            ReportKind::Speed => SPEED,
            ReportKind::ListSummary => LIST_SUMMARY,
            ReportKind::TimeToListDistribution => TIME_TO_LIST,
            ReportKind::Averages => AVERAGES,
        }
    }

    pub fn header(self) -> Vec<&'static str> {
        self.columns().iter().map(|c| c.name).collect()
    }

    pub fn csv_file(self) -> String {
        format!("{}.csv", self.name())
    }

    pub fn schema_file(self) -> String {
        format!("{}.schema.json", self.name())
    }

    pub fn schema_json(self) -> String {
        #[derive(Serialize)]
        struct Schema {
            kind: &'static str,
            version: u32,
            format: &'static str,
            columns: &'static [Column],
        }
        let schema = Schema { kind: self.name(), version: 1, format: "csv", columns: self.columns() };
        serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: header {found:?} does not match the {kind} schema {expected:?}")]
    SchemaMismatch { path: String, kind: &'static str, expected: Vec<&'static str>, found: Vec<String> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        v.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn churn_cells(r: &ChurnRow) -> Vec<String> {
    vec![
        r.entity.kind().to_string(),
        r.entity.to_string(),
        r.year.to_string(),
        num(r.stability),
        num(r.diversity),
        r.degenerate.to_string(),
        r.domains.to_string(),
    ]
}

fn speed_cells(r: &SpeedRow) -> Vec<String> {
    vec![
        r.entity.kind().to_string(),
        r.entity.to_string(),
        r.year.to_string(),
        num(r.reactive),
        num(r.proactive),
        num(r.reactive_raw),
        num(r.proactive_raw),
        opt_num(r.mean_reactive_days),
        opt_num(r.mean_proactive_days),
        r.n_reactive.to_string(),
        r.n_proactive.to_string(),
    ]
}

fn prominence_cells(r: &ProminenceRow) -> Vec<String> {
    vec![
        r.entity.kind().to_string(),
        r.entity.to_string(),
        r.year.to_string(),
        r.distinct_domains_per_site_sum.to_string(),
        r.sites.to_string(),
        num(r.per_site_average),
    ]
}

pub fn format_histogram(h: &std::collections::BTreeMap<i64, usize>) -> String {
    h.iter().map(|(d, c)| format!("{d:+}:{c}")).collect::<Vec<_>>().join(";")
}

fn change_cells(r: &ProminenceRow) -> Vec<String> {
    vec![
        r.entity.kind().to_string(),
        r.entity.to_string(),
        r.year.to_string(),
        opt_num(r.pct_sites_increase),
        opt_num(r.pct_sites_decrease),
        format_histogram(&r.change_histogram),
    ]
}

fn summary_cells(r: &ListSummaryRow) -> Vec<String> {
    vec![
        r.list_id.clone(),
        r.total_detections.to_string(),
        opt_num(r.mean_days),
        r.n_reactive.to_string(),
        opt_num(r.mean_reactive_days),
        r.n_proactive.to_string(),
        opt_num(r.mean_proactive_days),
        opt_num(r.mean_days_by_year),
        r.n_censored.to_string(),
        opt_num(r.mean_days_excl_censored),
    ]
}

fn ttl_cells(r: &TimeToListRow) -> Vec<String> {
    vec![r.list_id.clone(), r.day_bucket.to_string(), r.count.to_string()]
}

fn average_cells(r: &AverageRow) -> Vec<String> {
    vec![
        r.by.to_string(),
        r.kind.to_string(),
        r.group.clone(),
        r.year.map(|y| y.to_string()).unwrap_or_default(),
        r.field.to_string(),
        num(r.mean),
        r.cells.to_string(),
    ]
}

/// Cells of every row of `kind`, in output order.
pub fn rows(kind: ReportKind, a: &Analysis) -> Vec<Vec<String>> {
    match kind {
        ReportKind::AnnualProminence => a.prominence.iter().map(prominence_cells).collect(),
        ReportKind::ChangeStats => a.prominence.iter().map(change_cells).collect(),
        ReportKind::Churn => a.churn.iter().map(churn_cells).collect(),
        ReportKind::Speed => a.speed.iter().map(speed_cells).collect(),
        ReportKind::ListSummary => a.list_summary.iter().map(summary_cells).collect(),
        ReportKind::TimeToListDistribution => a.time_to_list.iter().map(ttl_cells).collect(),
        ReportKind::Averages => a.averages.iter().map(average_cells).collect(),
    }
}

/// Writes a header plus `rows`; an empty slice gives a header-only file.
pub fn emit_report(path: &Path, kind: ReportKind, rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(kind.header())?;
    for r in rows {
        debug_assert_eq!(r.len(), kind.columns().len());
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every report kind's CSV into `dir`.
pub fn write_tables(a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for kind in ReportKind::ALL {
        let path = dir.join(kind.csv_file());
        emit_report(&path, kind, &rows(kind, a))?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_schema(dir: &Path, kind: ReportKind) -> io::Result<PathBuf> {
    let path = dir.join(kind.schema_file());
    fs::write(&path, kind.schema_json())?;
    Ok(path)
}

/// Checks that a CSV's header matches its kind's schema.
pub fn check_header(path: &Path, kind: ReportKind) -> Result<(), ReportError> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let expected = kind.header();
    if found != expected {
        return Err(ReportError::SchemaMismatch {
            path: path.display().to_string(),
            kind: kind.name(),
            expected,
            found,
        });
    }
    Ok(())
}
