//! Drafting-group inference from swim-out times.
//!
//! Groups are threshold cuts of a one-dimensional agglomerative clustering.
//! For single linkage the connected components of the "gap ≤ threshold"
//! graph are exactly the runs of the sorted times between gaps larger than
//! the threshold, so no dendrogram is built. Complete linkage is computed by
//! agglomeration over contiguous runs.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{AthleteId, EventId, GroupSlot, PanelRow};

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("non-finite swim time for athlete `{athlete}` in event `{event}`")]
    NonFinite { event: String, athlete: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Single,
    Complete,
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(format!(
                "unknown linkage `{other}` (expected single|complete)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub athlete_id: AthleteId,
    pub swim_out_s: f64,
}

/// A within-event swim cluster. Members are ordered by swim time, ties by
/// athlete id, so `members[k]` holds position `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftingGroup {
    pub event_id: EventId,
    pub group_index: u32,
    pub members: Vec<Member>,
}

impl DraftingGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn position_of(&self, athlete: &AthleteId) -> Option<u32> {
        self.members
            .iter()
            .position(|m| &m.athlete_id == athlete)
            .map(|p| p as u32 + 1)
    }
}

fn by_time(a: &(AthleteId, f64), b: &(AthleteId, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}

/// Cluster one event's swim times. Gaps equal to the threshold merge.
pub fn cluster_event(
    event_id: &EventId,
    times: &[(AthleteId, f64)],
    threshold: f64,
    linkage: Linkage,
) -> Result<Vec<DraftingGroup>, GroupingError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(GroupingError::BadThreshold(threshold));
    }
    if let Some((a, _)) = times.iter().find(|(_, t)| !t.is_finite()) {
        return Err(GroupingError::NonFinite {
            event: event_id.0.clone(),
            athlete: a.0.clone(),
        });
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(by_time);
    let runs = match linkage {
        Linkage::Single => single_linkage_runs(&sorted, threshold),
        Linkage::Complete => complete_linkage_runs(&sorted, threshold),
    };
    Ok(runs
        .into_iter()
        .enumerate()
        .map(|(k, (lo, hi))| DraftingGroup {
            event_id: event_id.clone(),
            group_index: k as u32 + 1,
            members: sorted[lo..hi]
                .iter()
                .map(|(a, t)| Member {
                    athlete_id: a.clone(),
                    swim_out_s: *t,
                })
                .collect(),
        })
        .collect())
}

/// Half-open index runs of a sorted sequence split at gaps > threshold.
fn single_linkage_runs(sorted: &[(AthleteId, f64)], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..sorted.len() {
        if sorted[i].1 - sorted[i - 1].1 > threshold {
            runs.push((start, i));
            start = i;
        }
    }
    if !sorted.is_empty() {
        runs.push((start, sorted.len()));
    }
    runs
}

/// Agglomerative complete linkage cut at `threshold`. In one dimension the
/// cheapest merge is always between neighbouring runs (the diameter of a
/// union of non-adjacent runs covers the run between them), so only
/// adjacent pairs are examined; ties go to the leftmost pair.
fn complete_linkage_runs(sorted: &[(AthleteId, f64)], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = (0..sorted.len()).map(|i| (i, i + 1)).collect();
    let diameter = |lo: usize, hi: usize| sorted[hi - 1].1 - sorted[lo].1;
    while runs.len() > 1 {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..runs.len() - 1 {
            let d = diameter(runs[k].0, runs[k + 1].1);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        let (k, d) = best.expect("at least two runs");
        if d > threshold {
            break;
        }
        runs[k].1 = runs[k + 1].1;
        runs.remove(k + 1);
    }
    runs
}

/// Positions and role dummies for every member of `group`.
pub fn assign_positions(group: &DraftingGroup) -> Vec<(AthleteId, GroupSlot)> {
    let size = group.len() as u32;
    group
        .members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            (
                m.athlete_id.clone(),
                GroupSlot::new(group.group_index, size, k as u32 + 1),
            )
        })
        .collect()
}

/// Cluster every event in the panel and fill each row's group slot.
pub fn cluster_panel(
    rows: &mut [PanelRow],
    threshold: f64,
    linkage: Linkage,
) -> Result<(), GroupingError> {
    let mut by_event: BTreeMap<EventId, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_event.entry(r.event_id.clone()).or_default().push(i);
    }
    let assignments: Vec<Vec<(usize, GroupSlot)>> = by_event
        .par_iter()
        .map(|(event, idx)| {
            let times: Vec<(AthleteId, f64)> = idx
                .iter()
                .map(|&i| (rows[i].athlete_id.clone(), rows[i].swim_out_s))
                .collect();
            let lookup: BTreeMap<&AthleteId, usize> =
                idx.iter().map(|&i| (&rows[i].athlete_id, i)).collect();
            let groups = cluster_event(event, &times, threshold, linkage)?;
            Ok(groups
                .iter()
                .flat_map(assign_positions)
                .map(|(a, slot)| (lookup[&a], slot))
                .collect())
        })
        .collect::<Result<_, GroupingError>>()?;
    for (i, slot) in assignments.into_iter().flatten() {
        rows[i].group = Some(slot);
    }
    Ok(())
}

/// Predicate on group size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SizePredicate {
    #[default]
    Any,
    Lt(u32),
    Le(u32),
    Gt(u32),
    Ge(u32),
    Eq(u32),
}

impl SizePredicate {
    pub fn accepts(self, size: u32) -> bool {
        match self {
            SizePredicate::Any => true,
            SizePredicate::Lt(n) => size < n,
            SizePredicate::Le(n) => size <= n,
            SizePredicate::Gt(n) => size > n,
            SizePredicate::Ge(n) => size >= n,
            SizePredicate::Eq(n) => size == n,
        }
    }
}

impl FromStr for SizePredicate {
    type Err = String;

    /// Parses `<10`, `<=10`, `>1`, `>=3`, `=4` or `any`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "any" {
            return Ok(SizePredicate::Any);
        }
        let (ctor, rest): (fn(u32) -> SizePredicate, &str) = if let Some(r) = s.strip_prefix("<=") {
            (SizePredicate::Le, r)
        } else if let Some(r) = s.strip_prefix(">=") {
            (SizePredicate::Ge, r)
        } else if let Some(r) = s.strip_prefix('<') {
            (SizePredicate::Lt, r)
        } else if let Some(r) = s.strip_prefix('>') {
            (SizePredicate::Gt, r)
        } else if let Some(r) = s.strip_prefix('=') {
            (SizePredicate::Eq, r)
        } else {
            return Err(format!("bad group-size predicate `{s}`"));
        };
        rest.trim()
            .parse()
            .map(ctor)
            .map_err(|_| format!("bad group-size predicate `{s}`"))
    }
}

impl std::fmt::Display for SizePredicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SizePredicate::Any => write!(f, "any"),
            SizePredicate::Lt(n) => write!(f, "<{n}"),
            SizePredicate::Le(n) => write!(f, "<={n}"),
            SizePredicate::Gt(n) => write!(f, ">{n}"),
            SizePredicate::Ge(n) => write!(f, ">={n}"),
            SizePredicate::Eq(n) => write!(f, "={n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupFilterAudit {
    pub input: usize,
    pub dropped_ungrouped: usize,
    pub dropped_size: usize,
    pub capped: usize,
    pub output: usize,
}

/// Keep rows whose group size satisfies `predicate`; with `cap`, replace
/// each position `D` by `min(D, cap)`.
pub fn group_filters(
    rows: Vec<PanelRow>,
    predicate: SizePredicate,
    cap: Option<u32>,
) -> (Vec<PanelRow>, GroupFilterAudit) {
    let mut audit = GroupFilterAudit {
        input: rows.len(),
        ..Default::default()
    };
    let mut out = Vec::with_capacity(rows.len());
    for mut r in rows {
        let Some(slot) = r.group.as_mut() else {
            audit.dropped_ungrouped += 1;
            continue;
        };
        if !predicate.accepts(slot.group_size) {
            audit.dropped_size += 1;
            continue;
        }
        if let Some(c) = cap {
            if slot.position > c {
                slot.position = c;
                audit.capped += 1;
            }
        }
        out.push(r);
    }
    audit.output = out.len();
    (out, audit)
}
