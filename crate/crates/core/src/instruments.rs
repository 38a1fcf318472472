//! Group-ability instruments and pooled band treatments.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{AthleteId, EventId, PanelRow};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("bad band `{0}` (expected lo-hi with 1 <= lo <= hi)")]
    BadBand(String),
    #[error("bands {low} and {high} overlap")]
    Overlap { low: Band, high: Band },
    #[error("bad band pair `{0}` (expected lo-hi:lo-hi)")]
    BadPair(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentKind {
    Loo,
    Projected,
    Custom,
}

/// Per-row instrument values with provenance. A value is missing exactly
/// when its defining set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentColumn {
    pub kind: InstrumentKind,
    pub values: Vec<Option<f64>>,
}

/// How swim ability enters the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbilityScale {
    /// Raw swim-out seconds (lower is faster).
    #[default]
    Seconds,
    /// Swim-out time standardized within each event.
    EventZScore,
}

/// Mean swim time of every member except `member`; `None` for singletons.
pub fn loo_group_mean(times: &[f64], member: usize) -> Option<f64> {
    if times.len() < 2 || member >= times.len() {
        return None;
    }
    let others: f64 = times
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != member)
        .map(|(_, t)| t)
        .sum();
    Some(others / (times.len() - 1) as f64)
}

fn event_zscores(rows: &[PanelRow]) -> Vec<f64> {
    let mut stats: HashMap<&EventId, (f64, f64, usize)> = HashMap::new();
    for r in rows {
        let e = stats.entry(&r.event_id).or_insert((0.0, 0.0, 0));
        e.0 += r.swim_out_s;
        e.2 += 1;
    }
    for r in rows {
        let e = stats.get_mut(&r.event_id).unwrap();
        let mean = e.0 / e.2 as f64;
        e.1 += (r.swim_out_s - mean).powi(2);
    }
    rows.iter()
        .map(|r| {
            let (sum, ss, n) = stats[&r.event_id];
            let mean = sum / n as f64;
            let sd = if n > 1 {
                (ss / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            if sd > 0.0 {
                (r.swim_out_s - mean) / sd
            } else {
                0.0
            }
        })
        .collect()
}

/// Leave-one-out group mean for every row. Rows without a group get `None`.
pub fn loo_column(rows: &[PanelRow], scale: AbilityScale) -> InstrumentColumn {
    let ability: Vec<f64> = match scale {
        AbilityScale::Seconds => rows.iter().map(|r| r.swim_out_s).collect(),
        AbilityScale::EventZScore => event_zscores(rows),
    };
    let mut groups: BTreeMap<(&EventId, u32), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(g) = &r.group {
            groups
                .entry((&r.event_id, g.group_index))
                .or_default()
                .push(i);
        }
    }
    let mut values = vec![None; rows.len()];
    for members in groups.values() {
        let times: Vec<f64> = members.iter().map(|&i| ability[i]).collect();
        for (k, &i) in members.iter().enumerate() {
            values[i] = loo_group_mean(&times, k);
        }
    }
    InstrumentColumn {
        kind: InstrumentKind::Loo,
        values,
    }
}

/// Mean of an athlete's instrument values over their other events.
pub fn projected_instrument(other_events: &[f64]) -> Option<f64> {
    if other_events.is_empty() {
        None
    } else {
        Some(other_events.iter().sum::<f64>() / other_events.len() as f64)
    }
}

/// Projected instrument for every row: the athlete's mean `loo` value over
/// all events other than the row's own.
pub fn projected_column(rows: &[PanelRow], loo: &[Option<f64>]) -> InstrumentColumn {
    assert_eq!(rows.len(), loo.len(), "instrument column length mismatch");
    let mut per_athlete: HashMap<&AthleteId, (f64, usize)> = HashMap::new();
    for (r, z) in rows.iter().zip(loo) {
        if let Some(z) = z {
            let e = per_athlete.entry(&r.athlete_id).or_insert((0.0, 0));
            e.0 += z;
            e.1 += 1;
        }
    }
    let values = rows
        .iter()
        .zip(loo)
        .map(|(r, own)| {
            let (sum, n) = per_athlete.get(&r.athlete_id).copied().unwrap_or((0.0, 0));
            let (sum, n) = match own {
                Some(z) => (sum - z, n - 1),
                None => (sum, n),
            };
            (n > 0).then(|| sum / n as f64)
        })
        .collect();
    InstrumentColumn {
        kind: InstrumentKind::Projected,
        values,
    }
}

/// Fill `loo` on every row.
pub fn attach_loo(rows: &mut [PanelRow], scale: AbilityScale) {
    let col = loo_column(rows, scale);
    for (r, z) in rows.iter_mut().zip(col.values) {
        r.loo = z;
    }
}

/// Fill `projected` on every row from the rows' `loo` values.
pub fn attach_projected(rows: &mut [PanelRow]) {
    let loo: Vec<Option<f64>> = rows.iter().map(|r| r.loo).collect();
    let col = projected_column(rows, &loo);
    for (r, z) in rows.iter_mut().zip(col.values) {
        r.projected = z;
    }
}

/// An inclusive range of drafting positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Band {
    pub lo: u32,
    pub hi: u32,
}

impl Band {
    pub fn new(lo: u32, hi: u32) -> Result<Self, InstrumentError> {
        if lo == 0 || lo > hi {
            return Err(InstrumentError::BadBand(format!("{lo}-{hi}")));
        }
        Ok(Band { lo, hi })
    }

    pub fn contains(&self, d: u32) -> bool {
        (self.lo..=self.hi).contains(&d)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

impl FromStr for Band {
    type Err = InstrumentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || InstrumentError::BadBand(s.to_string());
        let (lo, hi) = match s.split_once('-') {
            Some((lo, hi)) => (
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let d = s.parse().map_err(|_| bad())?;
                (d, d)
            }
        };
        Band::new(lo, hi)
    }
}

/// Control band vs treated band, e.g. `1-2:3-4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BandPair {
    pub low: Band,
    pub high: Band,
}

impl BandPair {
    pub fn new(low: Band, high: Band) -> Result<Self, InstrumentError> {
        if low.lo <= high.hi && high.lo <= low.hi {
            return Err(InstrumentError::Overlap { low, high });
        }
        Ok(BandPair { low, high })
    }

    /// Label in the `1-2 vs 3-4` style.
    pub fn label(&self) -> String {
        format!("{} vs {}", self.low, self.high)
    }
}

impl fmt::Display for BandPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.low, self.high)
    }
}

impl FromStr for BandPair {
    type Err = InstrumentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (low, high) = s
            .split_once(':')
            .ok_or_else(|| InstrumentError::BadPair(s.to_string()))?;
        BandPair::new(low.parse()?, high.parse()?)
    }
}

impl TryFrom<String> for BandPair {
    type Error = InstrumentError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BandPair> for String {
    fn from(p: BandPair) -> String {
        p.to_string()
    }
}

/// Parse a comma-separated ladder such as `1-2:3-4,2-3:4-5`.
pub fn parse_ladder(s: &str) -> Result<Vec<BandPair>, InstrumentError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse())
        .collect()
}

/// The default comparison ladder: `k..k+1` vs `k+2..k+3` for `k = 1..=7`.
pub fn default_ladder() -> Vec<BandPair> {
    (1..=7)
        .map(|k| BandPair {
            low: Band { lo: k, hi: k + 1 },
            high: Band {
                lo: k + 2,
                hi: k + 3,
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandArm {
    Control,
    Treated,
    Excluded,
}

impl BandArm {
    pub fn treat(self) -> Option<f64> {
        match self {
            BandArm::Control => Some(0.0),
            BandArm::Treated => Some(1.0),
            BandArm::Excluded => None,
        }
    }
}

pub fn band_treatment(position: u32, pair: &BandPair) -> BandArm {
    if pair.low.contains(position) {
        BandArm::Control
    } else if pair.high.contains(position) {
        BandArm::Treated
    } else {
        BandArm::Excluded
    }
}
