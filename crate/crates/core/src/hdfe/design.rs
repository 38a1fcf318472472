//! Turn a panel and a formula into regression matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::instruments::{band_treatment, BandArm};
use crate::panel::{PanelRow, Period};
use crate::theory::benefit_transform;

use super::formula::{CovarianceSpec, FactorName, FormulaSpec};
use super::within::Factor;
use super::{build_outcome, HdfeError, OutcomeSpec};

/// How the `group` fixed effect is keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    /// Within-event group index, pooled across events.
    #[default]
    Pooled,
    /// `(event, group index)` pairs.
    EventGroup,
}

/// What the `cluster` regressor column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterRegressor {
    #[default]
    Index,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignOptions {
    pub group_key: GroupKey,
    pub cluster_regressor: ClusterRegressor,
    /// Benefit curve behind the `benefit` column.
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            group_key: GroupKey::Pooled,
            cluster_regressor: ClusterRegressor::Index,
            gamma: 1.0,
            lambda: 0.5,
        }
    }
}

/// Rows in, rows out and per-filter drops, in the order filters ran.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RowAudit {
    pub rows_in: usize,
    pub drops: Vec<(String, usize)>,
    pub rows_out: usize,
}

impl RowAudit {
    pub fn dropped(&self) -> usize {
        self.drops.iter().map(|(_, n)| n).sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.rows_in == self.rows_out + self.dropped()
    }

    fn bump(&mut self, what: &str) {
        match self.drops.iter_mut().find(|(k, _)| k == what) {
            Some((_, n)) => *n += 1,
            None => self.drops.push((what.to_string(), 1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y: DVector<f64>,
    pub y_name: String,
    /// Exogenous regressors; an intercept leads when nothing is absorbed.
    pub exog: DMatrix<f64>,
    pub exog_names: Vec<String>,
    pub endog: Option<DVector<f64>>,
    pub endog_name: Option<String>,
    /// Excluded instruments only.
    pub instruments: DMatrix<f64>,
    pub instrument_names: Vec<String>,
    pub absorb: Vec<Factor>,
    pub clusters: Vec<Factor>,
    pub se: CovarianceSpec,
    pub audit: RowAudit,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.exog_names.first().is_some_and(|n| n == INTERCEPT)
    }
}

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    Outcome,
    SwimOut,
    Total,
    Rank,
    Age,
    AgeSq,
    Male,
    EventYear,
    Period(Period),
    GroupIndex,
    GroupSize,
    ClusterReg,
    Position,
    Leader,
    Drafter,
    NthDrafter(usize),
    LastDrafter,
    Benefit,
    Loo,
    Projected,
    Treat,
}

impl Column {
    fn resolve(name: &str, lhs: bool) -> Option<Column> {
        use Column::*;
        Some(match name {
            "y" if lhs => Outcome,
            "swim_out_s" | "swim" => SwimOut,
            "total_s" => Total,
            "rank" => Rank,
            "age" => Age,
            "age_sq" => AgeSq,
            "male" => Male,
            "event_year" => EventYear,
            "pre" => Period(crate::panel::Period::Pre),
            "covid" => Period(crate::panel::Period::Covid),
            "post" => Period(crate::panel::Period::Post),
            "group_index" => GroupIndex,
            "group_size" => GroupSize,
            "cluster" => ClusterReg,
            "position" | "D" => Position,
            "leader" => Leader,
            "drafter" => Drafter,
            "first_drafter" => NthDrafter(0),
            "second_drafter" => NthDrafter(1),
            "third_drafter" => NthDrafter(2),
            "fourth_drafter" => NthDrafter(3),
            "fifth_drafter" => NthDrafter(4),
            "last_drafter" => LastDrafter,
            "benefit" | "B" => Benefit,
            "loo" | "Z" => Loo,
            "projected" => Projected,
            "treat" => Treat,
            _ => return None,
        })
    }

    fn needs_group(self) -> bool {
        use Column::*;
        matches!(
            self,
            GroupIndex
                | GroupSize
                | ClusterReg
                | Position
                | Leader
                | Drafter
                | NthDrafter(_)
                | LastDrafter
                | Benefit
                | Treat
        )
    }
}

struct Ctx<'a> {
    opts: &'a DesignOptions,
    poscap: Option<u32>,
}

impl Ctx<'_> {
    fn value(&self, c: Column, r: &PanelRow, y: Option<f64>) -> Option<f64> {
        use Column::*;
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let slot = r.group.as_ref();
        let pos = || slot.map(|s| self.poscap.map_or(s.position, |cap| s.position.min(cap)));
        Some(match c {
            Outcome => return y,
            SwimOut => r.swim_out_s,
            Total => r.total_s,
            Rank => r.rank,
            Age => f64::from(r.age),
            AgeSq => f64::from(r.age_sq),
            Male => b(r.male),
            EventYear => f64::from(r.event_year),
            Period(p) => b(r.period == p),
            GroupIndex => f64::from(slot?.group_index),
            GroupSize => f64::from(slot?.group_size),
            ClusterReg => match self.opts.cluster_regressor {
                ClusterRegressor::Index => f64::from(slot?.group_index),
                ClusterRegressor::Size => f64::from(slot?.group_size),
            },
            Position => f64::from(pos()?),
            Leader => b(slot?.leader),
            Drafter => b(slot?.drafter),
            NthDrafter(k) => b(slot?.nth_drafter[k]),
            LastDrafter => b(slot?.last_drafter),
            Benefit => benefit_transform(f64::from(pos()?), self.opts.gamma, self.opts.lambda),
            Loo => r.loo?,
            Projected => r.projected?,
            // filled from the band arm
            Treat => return None,
        })
    }
}

fn factor_key(name: FactorName, r: &PanelRow, key: GroupKey) -> Option<String> {
    let g = r.group.as_ref();
    Some(match (name, key) {
        (FactorName::Athlete, _) => r.athlete_id.0.clone(),
        (FactorName::Event, _) => r.event_id.0.clone(),
        (FactorName::Group, GroupKey::Pooled) => format!("{:010}", g?.group_index),
        (FactorName::Group, GroupKey::EventGroup) | (FactorName::EventGroup, _) => {
            format!("{}\u{1f}{:010}", r.event_id.0, g?.group_index)
        }
    })
}

/// Check that every column the formula references exists.
pub fn validate_formula(formula: &FormulaSpec) -> Result<(), HdfeError> {
    resolve_all(formula).map(|_| ())
}

struct Resolved {
    lhs: Column,
    terms: Vec<(String, Vec<Column>)>,
    endog: Option<(String, Column)>,
    instruments: Vec<(String, Column)>,
}

fn resolve_all(f: &FormulaSpec) -> Result<Resolved, HdfeError> {
    let col = |name: &str, lhs: bool| -> Result<Column, HdfeError> {
        let c =
            Column::resolve(name, lhs).ok_or_else(|| HdfeError::UnknownColumn(name.to_string()))?;
        if c == Column::Treat && f.filters.bands.is_none() {
            return Err(HdfeError::TreatWithoutBands(name.to_string()));
        }
        Ok(c)
    };
    let lhs = col(&f.lhs, true)?;
    let terms = f
        .terms
        .iter()
        .map(|t| {
            Ok((
                t.to_string(),
                t.parts
                    .iter()
                    .map(|p| col(p, false))
                    .collect::<Result<Vec<_>, _>>()?,
            ))
        })
        .collect::<Result<Vec<_>, HdfeError>>()?;
    let endog = f
        .endogenous
        .as_ref()
        .map(|e| col(e, false).map(|c| (e.clone(), c)))
        .transpose()?;
    let instruments = f
        .instruments
        .iter()
        .map(|z| col(z, false).map(|c| (z.clone(), c)))
        .collect::<Result<_, _>>()?;
    Ok(Resolved {
        lhs,
        terms,
        endog,
        instruments,
    })
}

/// Apply the formula's filters and assemble the matrices.
pub fn build_design(
    rows: &[PanelRow],
    formula: &FormulaSpec,
    opts: &DesignOptions,
) -> Result<DesignMatrices, HdfeError> {
    let res = resolve_all(formula)?;
    if formula.endogenous.is_some() != !formula.instruments.is_empty() {
        return Err(HdfeError::BadOutcome(
            "an endogenous term needs instruments and vice versa".into(),
        ));
    }
    let filters = &formula.filters;
    let rank_cap = filters.rank_cap.or(formula.outcome.rank_cap);
    let y_all = if res.lhs == Column::Outcome {
        let spec = OutcomeSpec {
            rank_cap: None,
            ..formula.outcome
        };
        Some(build_outcome(rows, &spec)?)
    } else {
        None
    };

    let cluster_names = formula.se.cluster_factors();
    let all_cols: Vec<Column> = res
        .terms
        .iter()
        .flat_map(|(_, cs)| cs.iter().copied())
        .chain(res.endog.iter().map(|(_, c)| *c))
        .chain(res.instruments.iter().map(|(_, c)| *c))
        .chain(std::iter::once(res.lhs))
        .collect();
    let group_factor = |f: &FactorName| matches!(f, FactorName::Group | FactorName::EventGroup);
    let needs_group = all_cols.iter().any(|c| c.needs_group())
        || formula.absorb.iter().any(group_factor)
        || cluster_names.iter().any(group_factor)
        || filters.group_size != crate::grouping::SizePredicate::Any
        || filters.bands.is_some()
        || filters.position_cap.is_some();

    let ctx = Ctx {
        opts,
        poscap: filters.position_cap,
    };
    let mut audit = RowAudit {
        rows_in: rows.len(),
        ..Default::default()
    };
    for name in [
        "ungrouped",
        "group_size",
        "rank_cap",
        "period",
        "band_excluded",
        "outcome_undefined",
    ] {
        audit.drops.push((name.to_string(), 0));
    }

    let k_exog = res.terms.len();
    let mut y = Vec::new();
    let mut exog: Vec<Vec<f64>> = vec![Vec::new(); k_exog];
    let mut endog = Vec::new();
    let mut inst: Vec<Vec<f64>> = vec![Vec::new(); res.instruments.len()];
    let mut kept: Vec<&PanelRow> = Vec::new();
    let mut row_vals = vec![0.0; k_exog];
    let mut inst_vals = vec![0.0; res.instruments.len()];

    'rows: for (i, r) in rows.iter().enumerate() {
        if needs_group && r.group.is_none() {
            audit.bump("ungrouped");
            continue;
        }
        if let Some(slot) = &r.group {
            if !filters.group_size.accepts(slot.group_size) {
                audit.bump("group_size");
                continue;
            }
        }
        if rank_cap.is_some_and(|c| r.rank >= c) {
            audit.bump("rank_cap");
            continue;
        }
        if filters.period.is_some_and(|p| p != r.period) {
            audit.bump("period");
            continue;
        }
        let treat = match (&filters.bands, &r.group) {
            (Some(pair), Some(slot)) => match band_treatment(slot.position, pair) {
                BandArm::Excluded => {
                    audit.bump("band_excluded");
                    continue;
                }
                arm => arm.treat(),
            },
            _ => None,
        };
        let yi = y_all.as_ref().and_then(|o| o.values[i]);
        if y_all.is_some() && yi.is_none() {
            audit.bump("outcome_undefined");
            continue;
        }
        let get = |c: Column, name: &str| -> Result<f64, String> {
            let v = if c == Column::Treat {
                treat
            } else {
                ctx.value(c, r, yi)
            };
            v.ok_or_else(|| format!("missing:{name}"))
        };
        let lhs_v = match get(res.lhs, &formula.lhs) {
            Ok(v) => v,
            Err(why) => {
                audit.bump(&why);
                continue;
            }
        };
        for (j, (_, cs)) in res.terms.iter().enumerate() {
            let mut v = 1.0;
            for (c, name) in cs.iter().zip(&formula.terms[j].parts) {
                match get(*c, name) {
                    Ok(x) => v *= x,
                    Err(why) => {
                        audit.bump(&why);
                        continue 'rows;
                    }
                }
            }
            row_vals[j] = v;
        }
        let endog_v = match &res.endog {
            Some((name, c)) => match get(*c, name) {
                Ok(v) => Some(v),
                Err(why) => {
                    audit.bump(&why);
                    continue;
                }
            },
            None => None,
        };
        for (j, (name, c)) in res.instruments.iter().enumerate() {
            match get(*c, name) {
                Ok(v) => inst_vals[j] = v,
                Err(why) => {
                    audit.bump(&why);
                    continue 'rows;
                }
            }
        }
        y.push(lhs_v);
        for (col, v) in exog.iter_mut().zip(&row_vals) {
            col.push(*v);
        }
        if let Some(v) = endog_v {
            endog.push(v);
        }
        for (col, v) in inst.iter_mut().zip(&inst_vals) {
            col.push(*v);
        }
        kept.push(r);
    }
    audit.rows_out = kept.len();
    let n = kept.len();
    if n == 0 {
        let why: Vec<String> = audit
            .drops
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(k, c)| format!("{k}={c}"))
            .collect();
        return Err(HdfeError::EmptySample(format!(
            "{} rows in, dropped {}",
            audit.rows_in,
            why.join(", ")
        )));
    }

    let mut exog_names: Vec<String> = res.terms.iter().map(|(s, _)| s.clone()).collect();
    if formula.absorb.is_empty() {
        exog.insert(0, vec![1.0; n]);
        exog_names.insert(0, INTERCEPT.to_string());
    }

    // exact duplicates make the design singular in a way worth naming early
    let endog_name = res.endog.as_ref().map(|(s, _)| s.clone());
    let mut named: Vec<(&str, &[f64])> = exog_names
        .iter()
        .map(String::as_str)
        .zip(exog.iter().map(Vec::as_slice))
        .collect();
    if let Some(name) = &endog_name {
        named.push((name, &endog));
    }
    for a in 0..named.len() {
        for b in a + 1..named.len() {
            if named[a].1 == named[b].1 {
                return Err(HdfeError::DuplicateColumns(
                    named[a].0.to_string(),
                    named[b].0.to_string(),
                ));
            }
        }
    }
    for (zi, zname) in formula.instruments.iter().enumerate() {
        for (xname, x) in exog_names.iter().zip(&exog) {
            if inst[zi] == *x {
                return Err(HdfeError::DuplicateColumns(xname.clone(), zname.clone()));
            }
        }
    }

    let make_factor = |name: FactorName| -> Factor {
        let keys: Vec<String> = kept
            .iter()
            .map(|r| factor_key(name, r, opts.group_key).expect("group rows kept"))
            .collect();
        Factor::from_keys(name.as_str(), &keys)
    };
    let absorb = formula.absorb.iter().map(|f| make_factor(*f)).collect();
    let clusters = cluster_names.iter().map(|f| make_factor(*f)).collect();

    let to_mat = |cols: &[Vec<f64>]| {
        let flat: Vec<f64> = cols.iter().flatten().copied().collect();
        DMatrix::from_column_slice(n, cols.len(), &flat)
    };
    Ok(DesignMatrices {
        y: DVector::from_vec(y),
        y_name: formula.lhs.clone(),
        exog: to_mat(&exog),
        exog_names,
        endog: endog_name.as_ref().map(|_| DVector::from_vec(endog)),
        endog_name,
        instruments: to_mat(&inst),
        instrument_names: formula.instruments.clone(),
        absorb,
        clusters,
        se: formula.se.clone(),
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::row;
    use crate::panel::GroupSlot;

    fn panel() -> Vec<PanelRow> {
        let mut rows = Vec::new();
        for (e, period) in [("e1", Period::Pre), ("e2", Period::Covid)] {
            for (k, a) in ["a", "b", "c"].iter().enumerate() {
                let mut r = row(a, e, 100.0 + k as f64, (k + 1) as f64 * 10.0);
                r.period = period;
                r.group = Some(GroupSlot::new(1, 3, k as u32 + 1));
                r.loo = Some(50.0 + k as f64);
                rows.push(r);
            }
        }
        rows
    }

    fn f(s: &str) -> FormulaSpec {
        FormulaSpec::parse(s).unwrap()
    }

    #[test]
    fn interaction_values() {
        let d = build_design(
            &panel(),
            &f("y ~ pre:drafter + covid:drafter | fe: athlete"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(d.exog_names, vec!["pre:drafter", "covid:drafter"]);
        // e1 is pre: rows 0..3, position 2 is a drafter
        assert_eq!(d.exog[(1, 0)], 1.0);
        assert_eq!(d.exog[(0, 0)], 0.0);
        assert_eq!(d.exog[(4, 0)], 0.0);
        assert_eq!(d.exog[(4, 1)], 1.0);
        assert!(d.audit.is_conserved());
    }

    #[test]
    fn rank_cap_drops_row() {
        let mut rows = panel();
        rows[0].rank = 300.0;
        let d = build_design(
            &rows,
            &f("y ~ age | fe: event | filter: rankcap=250"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(d.n(), 5);
        assert!(d.audit.drops.contains(&("rank_cap".to_string(), 1)));
        assert!(d.audit.is_conserved());
    }

    #[test]
    fn leader_toggle() {
        let base = f("y ~ leader + age | fe: event | iv: position ~ loo");
        let with = build_design(&panel(), &base, &DesignOptions::default()).unwrap();
        let without = build_design(
            &panel(),
            &base.with_leader(false),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(with.exog_names, vec!["leader", "age"]);
        assert_eq!(without.exog_names, vec!["age"]);
    }

    #[test]
    fn unknown_column_named() {
        let e = build_design(
            &panel(),
            &f("y ~ swim_speed | fe: event"),
            &DesignOptions::default(),
        )
        .unwrap_err();
        assert_eq!(e, HdfeError::UnknownColumn("swim_speed".into()));
        assert!(matches!(
            validate_formula(&f("y ~ treat")),
            Err(HdfeError::TreatWithoutBands(_))
        ));
    }

    #[test]
    fn missing_instrument_dropped() {
        let mut rows = panel();
        rows[2].loo = None;
        let d = build_design(
            &rows,
            &f("y ~ | fe: event | iv: position ~ loo"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(d.n(), 5);
        assert!(d.audit.drops.contains(&("missing:loo".to_string(), 1)));
        assert!(d.audit.is_conserved());
    }

    #[test]
    fn bands_and_treat() {
        let d = build_design(
            &panel(),
            &f("y ~ | fe: event | iv: treat ~ loo | filter: bands=1-1:2-3"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(
            d.endog.as_ref().unwrap().as_slice(),
            &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]
        );
        let d = build_design(
            &panel(),
            &f("y ~ | fe: event | iv: treat ~ loo | filter: bands=1-1:3-3"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(d.n(), 4);
        assert!(d.audit.drops.contains(&("band_excluded".to_string(), 2)));
    }

    #[test]
    fn duplicates_and_empty() {
        let e = build_design(
            &panel(),
            &f("y ~ age + age | fe: event"),
            &DesignOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(e, HdfeError::DuplicateColumns(_, _)));
        let e = build_design(
            &panel(),
            &f("y ~ age | fe: event | filter: groupsize>5"),
            &DesignOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(e, HdfeError::EmptySample(_)));
    }

    #[test]
    fn intercept_without_fe_and_group_keys() {
        let d = build_design(
            &panel(),
            &f("y ~ age | cluster: group"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert!(d.has_intercept());
        assert_eq!(d.clusters[0].levels, 1);
        let opts = DesignOptions {
            group_key: GroupKey::EventGroup,
            ..Default::default()
        };
        let d = build_design(&panel(), &f("y ~ age | cluster: group"), &opts).unwrap();
        assert_eq!(d.clusters[0].levels, 2);
    }

    #[test]
    fn position_cap_feeds_benefit() {
        let d = build_design(
            &panel(),
            &f("y ~ position + benefit | fe: event | filter: poscap=2"),
            &DesignOptions::default(),
        )
        .unwrap();
        assert_eq!(d.exog.column(0).as_slice(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0]);
        assert!(d.exog.column(1).iter().all(|&b| b == 0.0));
    }
}
