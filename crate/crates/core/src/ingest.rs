//! Loading, merging and cleaning of the three relational source tables.
//!
//! Malformed rows never abort a load: they are collected in a reject report
//! and counted, so a partially broken input still produces a panel with an
//! honest audit. Only structural problems (missing file, wrong header) are
//! hard errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{sort_panel, AthleteId, Category, EventId, PanelRow, Period};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file {0}")]
    MissingFile(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{table} table header mismatch: missing column(s) {missing:?}")]
    HeaderMismatch { table: Table, missing: Vec<String> },
    #[error("{table} table: {source}")]
    Csv { table: Table, source: csv::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Athletes,
    Events,
    Results,
    Panel,
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Table::Athletes => "athletes",
            Table::Events => "events",
            Table::Results => "results",
            Table::Panel => "panel",
        })
    }
}

/// One rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reject {
    pub table: Table,
    /// 1-based line in the source file; 0 when the row did not come from a file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AthleteRecord {
    pub athlete_id: AthleteId,
    pub male: bool,
    pub birth_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: EventId,
    pub date: NaiveDate,
    pub category: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Finished,
    Dnf,
    Dns,
    Missing,
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "finished" | "fin" | "ok" => Ok(Status::Finished),
            "dnf" => Ok(Status::Dnf),
            "dns" => Ok(Status::Dns),
            "missing" | "" | "na" => Ok(Status::Missing),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Finished => "Finished",
            Status::Dnf => "DNF",
            Status::Dns => "DNS",
            Status::Missing => "Missing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Source line in the results file; 0 when not read from a file.
    pub line: u64,
    pub athlete_id: AthleteId,
    pub event_id: EventId,
    pub swim_out_s: Option<f64>,
    pub total_s: Option<f64>,
    pub rank: Option<u32>,
    pub status: Status,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTables {
    pub athletes: Vec<AthleteRecord>,
    pub events: Vec<EventRecord>,
    pub results: Vec<ResultRecord>,
    pub rejects: Vec<Reject>,
}

pub const ATHLETE_COLUMNS: &[&str] = &["athlete_id", "gender", "birth_year"];
pub const EVENT_COLUMNS: &[&str] = &["event_id", "date", "category"];
pub const RESULT_COLUMNS: &[&str] = &[
    "athlete_id",
    "event_id",
    "swim_out_s",
    "total_s",
    "rank",
    "status",
];

/// Upper bound on plausible birth years. Fixed rather than clock-based so
/// that ingest does not depend on the run date; births after the event are
/// caught later by the age check.
const MAX_BIRTH_YEAR: i32 = 2100;

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.display().to_string()));
    }
    std::fs::File::open(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Load the athlete, event and result tables from delimited files.
pub fn load_tables(
    athletes: &Path,
    events: &Path,
    results: &Path,
) -> Result<RawTables, IngestError> {
    let mut raw = RawTables::default();
    read_athletes(open(athletes)?, &mut raw)?;
    read_events(open(events)?, &mut raw)?;
    read_results(open(results)?, &mut raw)?;
    Ok(raw)
}

struct Header {
    idx: Vec<usize>,
}

fn header<R: Read>(
    rdr: &mut csv::Reader<R>,
    table: Table,
    required: &[&str],
) -> Result<Header, IngestError> {
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv { table, source: e })?
        .clone();
    let pos: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !pos.contains_key(*c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::HeaderMismatch { table, missing });
    }
    Ok(Header {
        idx: required.iter().map(|c| pos[c]).collect(),
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Iterate records, diverting structurally broken ones to the reject list.
fn for_each_record<R: Read>(
    rdr: &mut csv::Reader<R>,
    table: Table,
    h: &Header,
    rejects: &mut Vec<Reject>,
    mut f: impl FnMut(u64, Vec<&str>) -> Result<(), String>,
) {
    for rec in rdr.records() {
        match rec {
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejects.push(Reject {
                    table,
                    line,
                    reason: e.to_string(),
                });
            }
            Ok(rec) => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                let fields: Option<Vec<&str>> = h.idx.iter().map(|&i| rec.get(i)).collect();
                let outcome = match fields {
                    None => Err(format!(
                        "expected at least {} fields, found {}",
                        h.idx.len(),
                        rec.len()
                    )),
                    Some(fields) => f(line, fields),
                };
                if let Err(reason) = outcome {
                    rejects.push(Reject {
                        table,
                        line,
                        reason,
                    });
                }
            }
        }
    }
}

fn parse_gender(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "m" | "male" | "1" => Ok(true),
        "f" | "w" | "female" | "0" => Ok(false),
        other => Err(format!("unknown gender `{other}`")),
    }
}

fn read_athletes<R: Read>(input: R, raw: &mut RawTables) -> Result<(), IngestError> {
    let mut rdr = reader(input);
    let h = header(&mut rdr, Table::Athletes, ATHLETE_COLUMNS)?;
    let mut seen = HashSet::new();
    let upper = MAX_BIRTH_YEAR;
    let athletes = &mut raw.athletes;
    for_each_record(&mut rdr, Table::Athletes, &h, &mut raw.rejects, |_, f| {
        if f[0].is_empty() {
            return Err("empty athlete_id".into());
        }
        let male = parse_gender(f[1])?;
        let birth_year: i32 = f[2]
            .parse()
            .map_err(|_| format!("unparseable birth_year `{}`", f[2]))?;
        if !(1900..=upper).contains(&birth_year) {
            return Err(format!("birth_year {birth_year} outside [1900, {upper}]"));
        }
        if !seen.insert(f[0].to_string()) {
            return Err(format!("duplicate athlete_id `{}`", f[0]));
        }
        athletes.push(AthleteRecord {
            athlete_id: AthleteId(f[0].to_string()),
            male,
            birth_year,
        });
        Ok(())
    });
    Ok(())
}

fn read_events<R: Read>(input: R, raw: &mut RawTables) -> Result<(), IngestError> {
    let mut rdr = reader(input);
    let h = header(&mut rdr, Table::Events, EVENT_COLUMNS)?;
    let mut seen = HashSet::new();
    let events = &mut raw.events;
    for_each_record(&mut rdr, Table::Events, &h, &mut raw.rejects, |_, f| {
        if f[0].is_empty() {
            return Err("empty event_id".into());
        }
        let date = NaiveDate::parse_from_str(f[1], "%Y-%m-%d")
            .map_err(|_| format!("unparseable date `{}`", f[1]))?;
        let category: Category = f[2].parse()?;
        if !seen.insert(f[0].to_string()) {
            return Err(format!("duplicate event_id `{}`", f[0]));
        }
        events.push(EventRecord {
            event_id: EventId(f[0].to_string()),
            date,
            category,
        });
        Ok(())
    });
    Ok(())
}

fn missing_marker(s: &str) -> bool {
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

fn opt_seconds(name: &str, s: &str) -> Result<Option<f64>, String> {
    if missing_marker(s) {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("unparseable {name} `{s}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!(
            "{name} must be a finite non-negative number, got `{s}`"
        ));
    }
    Ok(Some(v))
}

fn read_results<R: Read>(input: R, raw: &mut RawTables) -> Result<(), IngestError> {
    let mut rdr = reader(input);
    let h = header(&mut rdr, Table::Results, RESULT_COLUMNS)?;
    let mut seen = HashSet::new();
    let results = &mut raw.results;
    for_each_record(&mut rdr, Table::Results, &h, &mut raw.rejects, |line, f| {
        if f[0].is_empty() || f[1].is_empty() {
            return Err("empty athlete_id or event_id".into());
        }
        let swim_out_s = opt_seconds("swim_out_s", f[2])?;
        let total_s = opt_seconds("total_s", f[3])?;
        let rank = if missing_marker(f[4]) {
            None
        } else {
            Some(
                f[4].parse::<u32>()
                    .map_err(|_| format!("unparseable rank `{}`", f[4]))?,
            )
        };
        let status: Status = f[5].parse()?;
        if !seen.insert((f[0].to_string(), f[1].to_string())) {
            return Err(format!(
                "duplicate result for athlete `{}` in event `{}`",
                f[0], f[1]
            ));
        }
        results.push(ResultRecord {
            line,
            athlete_id: AthleteId(f[0].to_string()),
            event_id: EventId(f[1].to_string()),
            swim_out_s,
            total_s,
            rank,
            status,
        });
        Ok(())
    });
    Ok(())
}

/// A finished, complete result joined with its athlete and event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub line: u64,
    pub athlete_id: AthleteId,
    pub event_id: EventId,
    pub event_date: NaiveDate,
    pub category: Category,
    pub male: bool,
    pub birth_year: i32,
    pub swim_out_s: f64,
    pub total_s: f64,
    pub rank: u32,
}

/// Row accounting for the whole ingest stage.
///
/// `input == output + dropped_unresolved + dropped_missing + dropped_dnf +
/// dropped_dns + dropped_invalid_age` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAudit {
    pub input: usize,
    pub dropped_unresolved: usize,
    pub dropped_missing: usize,
    pub dropped_dnf: usize,
    pub dropped_dns: usize,
    pub dropped_invalid_age: usize,
    pub output: usize,
}

impl IngestAudit {
    pub fn dropped(&self) -> usize {
        self.dropped_unresolved
            + self.dropped_missing
            + self.dropped_dnf
            + self.dropped_dns
            + self.dropped_invalid_age
    }

    pub fn is_conserved(&self) -> bool {
        self.input == self.output + self.dropped()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub rows: Vec<MergedRow>,
    pub audit: IngestAudit,
    pub rejects: Vec<Reject>,
}

/// Join results to athletes and events and keep finished, complete rows.
/// Output is sorted by `(event_id, athlete_id)`.
pub fn merge_and_clean(raw: &RawTables) -> Merged {
    let athletes: HashMap<&AthleteId, &AthleteRecord> =
        raw.athletes.iter().map(|a| (&a.athlete_id, a)).collect();
    let events: HashMap<&EventId, &EventRecord> =
        raw.events.iter().map(|e| (&e.event_id, e)).collect();
    let mut audit = IngestAudit {
        input: raw.results.len(),
        ..Default::default()
    };
    let mut rejects = Vec::new();
    let mut rows = Vec::with_capacity(raw.results.len());
    for r in &raw.results {
        let (Some(a), Some(e)) = (athletes.get(&r.athlete_id), events.get(&r.event_id)) else {
            audit.dropped_unresolved += 1;
            rejects.push(Reject {
                table: Table::Results,
                line: r.line,
                reason: format!(
                    "unresolved key: athlete `{}` / event `{}`",
                    r.athlete_id, r.event_id
                ),
            });
            continue;
        };
        match r.status {
            Status::Dnf => audit.dropped_dnf += 1,
            Status::Dns => audit.dropped_dns += 1,
            Status::Missing => audit.dropped_missing += 1,
            Status::Finished => match (r.swim_out_s, r.total_s, r.rank) {
                (Some(swim_out_s), Some(total_s), Some(rank)) => rows.push(MergedRow {
                    line: r.line,
                    athlete_id: r.athlete_id.clone(),
                    event_id: r.event_id.clone(),
                    event_date: e.date,
                    category: e.category,
                    male: a.male,
                    birth_year: a.birth_year,
                    swim_out_s,
                    total_s,
                    rank,
                }),
                _ => audit.dropped_missing += 1,
            },
        }
    }
    rows.sort_by(|a, b| (&a.event_id, &a.athlete_id).cmp(&(&b.event_id, &b.athlete_id)));
    audit.output = rows.len();
    Merged {
        rows,
        audit,
        rejects,
    }
}

/// Rebuild source tables from merged rows (every row `Finished`).
pub fn tables_from_merged(rows: &[MergedRow]) -> RawTables {
    let mut athletes = BTreeMap::new();
    let mut events = BTreeMap::new();
    let mut results = Vec::with_capacity(rows.len());
    for r in rows {
        athletes
            .entry(r.athlete_id.clone())
            .or_insert_with(|| AthleteRecord {
                athlete_id: r.athlete_id.clone(),
                male: r.male,
                birth_year: r.birth_year,
            });
        events
            .entry(r.event_id.clone())
            .or_insert_with(|| EventRecord {
                event_id: r.event_id.clone(),
                date: r.event_date,
                category: r.category,
            });
        results.push(ResultRecord {
            line: r.line,
            athlete_id: r.athlete_id.clone(),
            event_id: r.event_id.clone(),
            swim_out_s: Some(r.swim_out_s),
            total_s: Some(r.total_s),
            rank: Some(r.rank),
            status: Status::Finished,
        });
    }
    RawTables {
        athletes: athletes.into_values().collect(),
        events: events.into_values().collect(),
        results,
        rejects: Vec::new(),
    }
}

/// Period cut dates. Events before `covid_start` are `Pre`, events on or
/// after `post_start` are `Post`, everything in between is `Covid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodBoundaries {
    pub covid_start: NaiveDate,
    pub post_start: NaiveDate,
}

impl Default for PeriodBoundaries {
    fn default() -> Self {
        PeriodBoundaries {
            covid_start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            post_start: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
        }
    }
}

impl PeriodBoundaries {
    pub fn new(covid_start: NaiveDate, post_start: NaiveDate) -> Result<Self, String> {
        if covid_start > post_start {
            return Err(format!(
                "covid_start {covid_start} is after post_start {post_start}"
            ));
        }
        Ok(PeriodBoundaries {
            covid_start,
            post_start,
        })
    }

    pub fn period(&self, date: NaiveDate) -> Period {
        if date < self.covid_start {
            Period::Pre
        } else if date < self.post_start {
            Period::Covid
        } else {
            Period::Post
        }
    }
}

/// Fill age, age squared, event year and period. Rows whose event year
/// precedes the birth year are excluded and counted.
pub fn derive_covariates(
    rows: Vec<MergedRow>,
    bounds: &PeriodBoundaries,
) -> (Vec<PanelRow>, Vec<Reject>) {
    let mut out = Vec::with_capacity(rows.len());
    let mut rejects = Vec::new();
    for r in rows {
        let event_year = r.event_date.year();
        let age = event_year - r.birth_year;
        if age < 0 {
            rejects.push(Reject {
                table: Table::Results,
                line: r.line,
                reason: format!(
                    "invalid age: athlete `{}` born {} in event `{}` of {}",
                    r.athlete_id, r.birth_year, r.event_id, event_year
                ),
            });
            continue;
        }
        out.push(PanelRow {
            athlete_id: r.athlete_id,
            event_id: r.event_id,
            event_date: r.event_date,
            category: r.category,
            male: r.male,
            birth_year: r.birth_year,
            event_year,
            age,
            age_sq: age * age,
            period: bounds.period(r.event_date),
            swim_out_s: r.swim_out_s,
            total_s: r.total_s,
            rank: f64::from(r.rank),
            group: None,
            loo: None,
            projected: None,
        });
    }
    sort_panel(&mut out);
    (out, rejects)
}

/// Result of the whole ingest stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub panel: Vec<PanelRow>,
    pub audit: IngestAudit,
    pub rejects: Vec<Reject>,
}

/// Merge, clean and derive covariates in one go.
pub fn build_panel(raw: &RawTables, bounds: &PeriodBoundaries) -> Ingested {
    let merged = merge_and_clean(raw);
    let mut rejects = raw.rejects.clone();
    rejects.extend(merged.rejects);
    let (panel, age_rejects) = derive_covariates(merged.rows, bounds);
    let mut audit = merged.audit;
    audit.dropped_invalid_age = age_rejects.len();
    audit.output = panel.len();
    rejects.extend(age_rejects);
    Ingested {
        panel,
        audit,
        rejects,
    }
}

/// Write the reject report as delimited text.
pub fn write_rejects<W: std::io::Write>(out: W, rejects: &[Reject]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["table", "line", "reason"])?;
    for r in rejects {
        w.write_record([r.table.to_string(), r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}
