//! The canonical athlete × event panel and its flat-file representation.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::format::sig6;

/// Opaque athlete identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AthleteId(pub String);

/// Opaque event identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(pub String);

impl fmt::Display for AthleteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AthleteId {
    fn from(s: &str) -> Self {
        AthleteId(s.to_string())
    }
}

impl From<&str> for EventId {
    fn from(s: &str) -> Self {
        EventId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Sprint,
    Short,
    Middle,
    Long,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Sprint,
        Category::Short,
        Category::Middle,
        Category::Long,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Sprint => "Sprint",
            Category::Short => "Short",
            Category::Middle => "Middle",
            Category::Long => "Long",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sprint" => Ok(Category::Sprint),
            "short" | "olympic" => Ok(Category::Short),
            "middle" => Ok(Category::Middle),
            "long" => Ok(Category::Long),
            other => Err(format!("unknown event category `{other}`")),
        }
    }
}

/// Pandemic period of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    Pre,
    Covid,
    Post,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Pre, Period::Covid, Period::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Period::Pre => "Pre",
            Period::Covid => "Covid",
            Period::Post => "Post",
        }
    }
}

impl FromStr for Period {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" | "pre-covid" => Ok(Period::Pre),
            "covid" => Ok(Period::Covid),
            "post" | "post-covid" => Ok(Period::Post),
            other => Err(format!("unknown period `{other}`")),
        }
    }
}

/// Drafting-group slots of a panel row.
///
/// `position` is 1 for the leader; "first drafter" is position 2. The dummies
/// are fixed at assignment time, so capping `position` later leaves them
/// untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSlot {
    pub group_index: u32,
    pub group_size: u32,
    pub position: u32,
    pub leader: bool,
    pub drafter: bool,
    /// First through fifth drafter (positions 2..=6).
    pub nth_drafter: [bool; 5],
    pub last_drafter: bool,
}

impl GroupSlot {
    /// Slot for `position` in a group of `group_size`.
    pub fn new(group_index: u32, group_size: u32, position: u32) -> Self {
        let mut nth_drafter = [false; 5];
        if (2..=6).contains(&position) {
            nth_drafter[(position - 2) as usize] = true;
        }
        GroupSlot {
            group_index,
            group_size,
            position,
            leader: position == 1,
            drafter: position != 1,
            nth_drafter,
            last_drafter: group_size > 1 && position == group_size,
        }
    }
}

/// One athlete × event observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub athlete_id: AthleteId,
    pub event_id: EventId,
    pub event_date: NaiveDate,
    pub category: Category,
    pub male: bool,
    pub birth_year: i32,
    pub event_year: i32,
    pub age: i32,
    pub age_sq: i32,
    pub period: Period,
    /// Swim-out time in seconds.
    pub swim_out_s: f64,
    pub total_s: f64,
    /// Final rank. Integral for race data; simulated panels carry a latent
    /// real-valued rank so that `ln(rank + 1)` reproduces the simulated outcome.
    pub rank: f64,
    pub group: Option<GroupSlot>,
    /// Leave-one-out group mean swim time.
    pub loo: Option<f64>,
    /// Projected (cross-event) leave-one-out instrument.
    pub projected: Option<f64>,
}

impl PanelRow {
    pub fn key(&self) -> (&EventId, &AthleteId) {
        (&self.event_id, &self.athlete_id)
    }
}

/// Sort rows by `(event_id, athlete_id)`.
pub fn sort_panel(rows: &mut [PanelRow]) {
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot open panel file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("panel file: {0}")]
    Csv(#[from] csv::Error),
    #[error("panel file is missing column `{0}`")]
    MissingColumn(String),
    #[error("panel file line {line}: bad value `{value}` in column `{column}`")]
    BadValue {
        line: u64,
        column: String,
        value: String,
    },
}

pub const PANEL_COLUMNS: &[&str] = &[
    "athlete_id",
    "event_id",
    "event_date",
    "category",
    "male",
    "birth_year",
    "event_year",
    "age",
    "age_sq",
    "period",
    "swim_out_s",
    "total_s",
    "rank",
    "group_index",
    "group_size",
    "position",
    "leader",
    "drafter",
    "first_drafter",
    "second_drafter",
    "third_drafter",
    "fourth_drafter",
    "fifth_drafter",
    "last_drafter",
    "loo",
    "projected",
];

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// Write the panel as comma-separated text. `comment` lines are emitted first,
/// each prefixed with `# `.
pub fn write_panel<W: Write>(
    out: W,
    rows: &[PanelRow],
    comment: &[String],
) -> Result<(), PanelError> {
    let mut out = out;
    for line in comment {
        writeln!(out, "# {line}").map_err(|e| PanelError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PANEL_COLUMNS)?;
    for r in rows {
        let mut rec: Vec<String> = vec![
            r.athlete_id.0.clone(),
            r.event_id.0.clone(),
            r.event_date.to_string(),
            r.category.as_str().to_string(),
            flag(r.male).to_string(),
            r.birth_year.to_string(),
            r.event_year.to_string(),
            r.age.to_string(),
            r.age_sq.to_string(),
            r.period.as_str().to_string(),
            sig6(r.swim_out_s),
            sig6(r.total_s),
            sig6(r.rank),
        ];
        match &r.group {
            Some(g) => {
                rec.push(g.group_index.to_string());
                rec.push(g.group_size.to_string());
                rec.push(g.position.to_string());
                rec.push(flag(g.leader).to_string());
                rec.push(flag(g.drafter).to_string());
                rec.extend(g.nth_drafter.iter().map(|&b| flag(b).to_string()));
                rec.push(flag(g.last_drafter).to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 11)),
        }
        rec.push(opt_num(r.loo));
        rec.push(opt_num(r.projected));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| PanelError::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_panel_file(
    path: &Path,
    rows: &[PanelRow],
    comment: &[String],
) -> Result<(), PanelError> {
    let f = std::fs::File::create(path).map_err(|e| PanelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_panel(std::io::BufWriter::new(f), rows, comment)
}

struct Columns {
    idx: std::collections::HashMap<String, usize>,
}

impl Columns {
    fn get<'a>(&self, rec: &'a csv::StringRecord, name: &str) -> Option<&'a str> {
        self.idx.get(name).and_then(|&i| rec.get(i)).map(str::trim)
    }

    fn req<'a>(&self, rec: &'a csv::StringRecord, name: &str) -> Result<&'a str, PanelError> {
        self.get(rec, name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    }
}

fn parse_field<T: FromStr>(line: u64, column: &str, value: &str) -> Result<T, PanelError> {
    value.parse::<T>().map_err(|_| PanelError::BadValue {
        line,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_flag(line: u64, column: &str, value: &str) -> Result<bool, PanelError> {
    match value {
        "1" | "true" | "TRUE" => Ok(true),
        "0" | "false" | "FALSE" => Ok(false),
        _ => Err(PanelError::BadValue {
            line,
            column: column.into(),
            value: value.into(),
        }),
    }
}

/// Read a panel written by [`write_panel`]. Group and instrument columns may
/// be absent or empty.
pub fn read_panel<R: Read>(input: R) -> Result<Vec<PanelRow>, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = Columns {
        idx: headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect(),
    };
    for required in &PANEL_COLUMNS[..13] {
        if !cols.idx.contains_key(*required) {
            return Err(PanelError::MissingColumn((*required).to_string()));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |name: &str| -> Result<f64, PanelError> {
            parse_field(line, name, cols.req(&rec, name)?)
        };
        let int = |name: &str| -> Result<i32, PanelError> {
            parse_field(line, name, cols.req(&rec, name)?)
        };
        let opt = |name: &str| -> Result<Option<f64>, PanelError> {
            match cols.get(&rec, name) {
                None | Some("") => Ok(None),
                Some(v) => parse_field(line, name, v).map(Some),
            }
        };
        let group = match cols.get(&rec, "group_index") {
            None | Some("") => None,
            Some(gi) => {
                let group_index: u32 = parse_field(line, "group_index", gi)?;
                let group_size: u32 =
                    parse_field(line, "group_size", cols.req(&rec, "group_size")?)?;
                let position: u32 = parse_field(line, "position", cols.req(&rec, "position")?)?;
                let mut slot = GroupSlot::new(group_index, group_size, position);
                // dummies are stored explicitly: positions may have been capped
                if cols.idx.contains_key("leader") {
                    slot.leader = parse_flag(line, "leader", cols.req(&rec, "leader")?)?;
                    slot.drafter = parse_flag(line, "drafter", cols.req(&rec, "drafter")?)?;
                    for (k, name) in PANEL_COLUMNS[18..23].iter().enumerate() {
                        slot.nth_drafter[k] = parse_flag(line, name, cols.req(&rec, name)?)?;
                    }
                    slot.last_drafter =
                        parse_flag(line, "last_drafter", cols.req(&rec, "last_drafter")?)?;
                }
                Some(slot)
            }
        };
        let category_s = cols.req(&rec, "category")?;
        let period_s = cols.req(&rec, "period")?;
        rows.push(PanelRow {
            athlete_id: AthleteId(cols.req(&rec, "athlete_id")?.to_string()),
            event_id: EventId(cols.req(&rec, "event_id")?.to_string()),
            event_date: parse_field(line, "event_date", cols.req(&rec, "event_date")?)?,
            category: category_s.parse().map_err(|_| PanelError::BadValue {
                line,
                column: "category".into(),
                value: category_s.into(),
            })?,
            male: parse_flag(line, "male", cols.req(&rec, "male")?)?,
            birth_year: int("birth_year")?,
            event_year: int("event_year")?,
            age: int("age")?,
            age_sq: int("age_sq")?,
            period: period_s.parse().map_err(|_| PanelError::BadValue {
                line,
                column: "period".into(),
                value: period_s.into(),
            })?,
            swim_out_s: num("swim_out_s")?,
            total_s: num("total_s")?,
            rank: num("rank")?,
            group,
            loo: opt("loo")?,
            projected: opt("projected")?,
        });
    }
    Ok(rows)
}

pub fn read_panel_file(path: &Path) -> Result<Vec<PanelRow>, PanelError> {
    let f = std::fs::File::open(path).map_err(|e| PanelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_panel(std::io::BufReader::new(f))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Minimal row for unit tests.
    pub fn row(athlete: &str, event: &str, swim: f64, rank: f64) -> PanelRow {
        PanelRow {
            athlete_id: athlete.into(),
            event_id: event.into(),
            event_date: NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
            category: Category::Sprint,
            male: true,
            birth_year: 1977,
            event_year: 2015,
            age: 38,
            age_sq: 1444,
            period: Period::Pre,
            swim_out_s: swim,
            total_s: swim * 6.0,
            rank,
            group: None,
            loo: None,
            projected: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::row;
    use super::*;

    #[test]
    fn slot_dummies() {
        let leader = GroupSlot::new(1, 3, 1);
        assert!(leader.leader && !leader.drafter && !leader.last_drafter);
        let first = GroupSlot::new(1, 3, 2);
        assert!(first.nth_drafter[0] && first.drafter);
        let last = GroupSlot::new(1, 3, 3);
        assert!(last.last_drafter && last.nth_drafter[1]);
        let solo = GroupSlot::new(2, 1, 1);
        assert!(solo.leader && !solo.last_drafter);
        let deep = GroupSlot::new(1, 9, 8);
        assert_eq!(deep.nth_drafter, [false; 5]);
    }

    #[test]
    fn panel_file_round_trip() {
        let mut a = row("a1", "e1", 1431.5, 12.0);
        a.group = Some(GroupSlot::new(2, 4, 3));
        a.loo = Some(1429.25);
        let mut b = row("a2", "e1", 1500.0, 40.0);
        // capped position keeps its original dummies
        let mut slot = GroupSlot::new(1, 9, 9);
        slot.position = 5;
        b.group = Some(slot);
        let rows = vec![a, b, row("a3", "e2", 900.0, 3.0)];
        let mut buf = Vec::new();
        write_panel(&mut buf, &rows, &["hash=abc".to_string()]).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn missing_required_column() {
        let text = "athlete_id,event_id\na,b\n";
        assert!(matches!(
            read_panel(text.as_bytes()),
            Err(PanelError::MissingColumn(_))
        ));
    }
}
