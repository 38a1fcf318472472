//! Design matrices and multi-way fixed-effect absorption.

pub mod design;
pub mod formula;
pub mod within;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{EventId, PanelRow};

pub use design::{
    build_design, validate_formula, ClusterRegressor, DesignMatrices, DesignOptions, GroupKey,
    RowAudit, INTERCEPT,
};
pub use formula::{CovarianceSpec, FactorName, Filters, FormulaSpec, ParseError, Term};
pub use within::{absorbed_dof, within_transform, AbsorbOptions, Factor};

#[derive(Debug, Error, PartialEq)]
pub enum HdfeError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` requires a band filter (bands=lo-hi:lo-hi)")]
    TreatWithoutBands(String),
    #[error("empty sample after filters ({0})")]
    EmptySample(String),
    #[error("duplicate columns `{0}` and `{1}`")]
    DuplicateColumns(String, String),
    #[error(
        "fixed-effect absorption did not converge for column {column} (max change {max_change:e})"
    )]
    NotConverged { column: usize, max_change: f64 },
    #[error("invalid outcome spec: {0}")]
    BadOutcome(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    /// `ln(rank + 1)`.
    #[default]
    LogRankPlus1,
    /// `ln(rank - event mean rank + shift_c)`.
    CenteredLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeSpec {
    pub mode: OutcomeMode,
    pub shift_c: f64,
    /// Keep rows with `rank < rank_cap`.
    pub rank_cap: Option<f64>,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec {
            mode: OutcomeMode::LogRankPlus1,
            shift_c: 1.0,
            rank_cap: None,
        }
    }
}

impl OutcomeSpec {
    pub fn validate(&self) -> Result<(), HdfeError> {
        if self.mode == OutcomeMode::CenteredLog
            && !(self.shift_c > 0.0 && self.shift_c.is_finite())
        {
            return Err(HdfeError::BadOutcome(format!(
                "shift_c must be positive, got {}",
                self.shift_c
            )));
        }
        if let Some(c) = self.rank_cap {
            if c.is_nan() || c <= 0.0 {
                return Err(HdfeError::BadOutcome(format!(
                    "rank_cap must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome values aligned with the input rows; `None` marks a dropped row.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeColumn {
    pub values: Vec<Option<f64>>,
    pub dropped_rank_cap: usize,
    pub dropped_undefined: usize,
}

/// Transform ranks into the regression outcome.
///
/// Event means for the centered mode are taken over every row passed in,
/// before the rank cap, so they do not depend on which rows later survive.
pub fn build_outcome(rows: &[PanelRow], spec: &OutcomeSpec) -> Result<OutcomeColumn, HdfeError> {
    spec.validate()?;
    let means: HashMap<&EventId, f64> = if spec.mode == OutcomeMode::CenteredLog {
        let mut acc: HashMap<&EventId, (f64, usize)> = HashMap::new();
        for r in rows {
            let e = acc.entry(&r.event_id).or_default();
            e.0 += r.rank;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    } else {
        HashMap::new()
    };
    let mut out = OutcomeColumn {
        values: Vec::with_capacity(rows.len()),
        dropped_rank_cap: 0,
        dropped_undefined: 0,
    };
    for r in rows {
        if spec.rank_cap.is_some_and(|c| r.rank >= c) {
            out.dropped_rank_cap += 1;
            out.values.push(None);
            continue;
        }
        let arg = match spec.mode {
            OutcomeMode::LogRankPlus1 => r.rank + 1.0,
            OutcomeMode::CenteredLog => r.rank - means[&r.event_id] + spec.shift_c,
        };
        if arg > 0.0 && arg.is_finite() {
            out.values.push(Some(arg.ln()));
        } else {
            out.dropped_undefined += 1;
            out.values.push(None);
        }
    }
    if !rows.is_empty() && out.values.iter().all(Option::is_none) {
        return Err(HdfeError::EmptySample("every outcome value dropped".into()));
    }
    if rows.is_empty() {
        return Err(HdfeError::EmptySample("no rows".into()));
    }
    Ok(out)
}
