//! Pooled band comparisons: binary "deeper band" treatment, instrumented by
//! the group-ability instrument, one regression per band pair.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimators::{semi_elasticity, tsls, EstimationOptions};
use crate::hdfe::{build_design, DesignOptions, FormulaSpec};
use crate::instruments::{band_treatment, BandArm, BandPair};
use crate::panel::PanelRow;
use crate::report::format::sig6;

/// Normal critical value for 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEstimate {
    /// Log points.
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    pub pct_change: f64,
    pub n_obs: usize,
    pub n_control: usize,
    pub n_treated: usize,
    pub first_stage_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandComparison {
    pub pair: BandPair,
    /// `None` when the comparison could not be estimated.
    pub result: Option<BandEstimate>,
    pub infeasible_reason: Option<String>,
}

impl BandComparison {
    pub fn label(&self) -> String {
        self.pair.label()
    }
}

/// The default comparison model.
pub fn default_formula() -> FormulaSpec {
    FormulaSpec::parse("y ~ | fe: athlete event | iv: treat ~ loo | cluster: event")
        .expect("static formula")
}

fn normal_p(t: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(t.abs())).min(1.0)
}

fn one(
    rows: &[PanelRow],
    pair: BandPair,
    base: &FormulaSpec,
    dopts: &DesignOptions,
    eopts: &EstimationOptions,
) -> BandComparison {
    let infeasible = |why: String| BandComparison {
        pair,
        result: None,
        infeasible_reason: Some(why),
    };
    let (mut control, mut treated) = (0, 0);
    for r in rows {
        match r.group.map(|g| band_treatment(g.position, &pair)) {
            Some(BandArm::Control) => control += 1,
            Some(BandArm::Treated) => treated += 1,
            _ => {}
        }
    }
    if control == 0 {
        return infeasible(format!("no rows in control band {}", pair.low));
    }
    if treated == 0 {
        return infeasible(format!("no rows in treated band {}", pair.high));
    }
    let mut formula = base.clone();
    formula.filters.bands = Some(pair);
    let design = match build_design(rows, &formula, dopts) {
        Ok(d) => d,
        Err(e) => return infeasible(e.to_string()),
    };
    let iv = match tsls(&design, eopts) {
        Ok(r) => r,
        Err(e) => return infeasible(e.to_string()),
    };
    let treat = design.endog.as_ref().expect("treat column");
    let n_treated = treat.iter().filter(|&&v| v == 1.0).count();
    let c = &iv.second_stage.coefficients[0];
    BandComparison {
        pair,
        result: Some(BandEstimate {
            estimate: c.estimate,
            se: c.se,
            ci_low: c.estimate - Z_95 * c.se,
            ci_high: c.estimate + Z_95 * c.se,
            p: normal_p(c.t),
            pct_change: semi_elasticity(c.estimate),
            n_obs: design.n(),
            n_control: design.n() - n_treated,
            n_treated,
            first_stage_f: iv.first_stage_f,
        }),
        infeasible_reason: None,
    }
}

/// Estimate every pair; output order follows `pairs`.
///
/// `base` supplies the outcome, fixed effects, instrument and covariance;
/// its band filter is replaced per pair. An empty arm or a failed fit marks
/// that comparison infeasible without stopping the others.
pub fn run_band_comparisons(
    rows: &[PanelRow],
    pairs: &[BandPair],
    base: &FormulaSpec,
    dopts: &DesignOptions,
    eopts: &EstimationOptions,
) -> Vec<BandComparison> {
    pairs
        .par_iter()
        .map(|&p| one(rows, p, base, dopts, eopts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub label: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

/// Plot-ready rows. Infeasible comparisons are skipped; with
/// `significant_only`, so are rows with `p >= alpha`.
pub fn emit_figure_data(
    comparisons: &[BandComparison],
    alpha: f64,
    significant_only: bool,
) -> Vec<FigureRow> {
    comparisons
        .iter()
        .filter_map(|c| {
            let r = c.result.as_ref()?;
            let significant = alpha >= 1.0 || r.p < alpha;
            (significant || !significant_only).then(|| FigureRow {
                label: c.label(),
                estimate: r.estimate,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
                significant,
            })
        })
        .collect()
}

fn comment_lines<W: Write>(out: &mut W, comment: &[String]) -> std::io::Result<()> {
    for c in comment {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

pub fn write_comparisons<W: Write>(
    mut out: W,
    comparisons: &[BandComparison],
    comment: &[String],
) -> std::io::Result<()> {
    comment_lines(&mut out, comment)?;
    writeln!(out, "comparison,estimate,se,ci_low,ci_high,p,pct_change,n_obs,n_control,n_treated,first_stage_f,note")?;
    for c in comparisons {
        match &c.result {
            Some(r) => writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},",
                c.label(),
                sig6(r.estimate),
                sig6(r.se),
                sig6(r.ci_low),
                sig6(r.ci_high),
                sig6(r.p),
                sig6(r.pct_change),
                r.n_obs,
                r.n_control,
                r.n_treated,
                sig6(r.first_stage_f)
            )?,
            None => writeln!(
                out,
                "{},,,,,,,,,,,infeasible: {}",
                c.label(),
                c.infeasible_reason
                    .as_deref()
                    .unwrap_or("")
                    .replace(',', ";")
            )?,
        }
    }
    Ok(())
}

pub fn write_figure<W: Write>(
    mut out: W,
    rows: &[FigureRow],
    comment: &[String],
) -> std::io::Result<()> {
    comment_lines(&mut out, comment)?;
    writeln!(out, "label,estimate,ci_low,ci_high,significant")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label,
            sig6(r.estimate),
            sig6(r.ci_low),
            sig6(r.ci_high),
            u8::from(r.significant)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruments::default_ladder;

    fn comp(label_pair: BandPair, estimate: f64, p: f64) -> BandComparison {
        BandComparison {
            pair: label_pair,
            result: Some(BandEstimate {
                estimate,
                se: 0.1,
                ci_low: estimate - Z_95 * 0.1,
                ci_high: estimate + Z_95 * 0.1,
                p,
                pct_change: semi_elasticity(estimate),
                n_obs: 10,
                n_control: 5,
                n_treated: 5,
                first_stage_f: 50.0,
            }),
            infeasible_reason: None,
        }
    }

    #[test]
    fn conversions() {
        assert!((semi_elasticity(-0.382) - -31.8).abs() < 0.05);
        assert!((semi_elasticity(-0.925) - -60.35).abs() < 0.01);
    }

    #[test]
    fn figure_filtering() {
        let ladder = default_ladder();
        let ps = [0.000, 0.001, 0.01, 0.03, 0.04, 0.2, 0.401];
        let comps: Vec<_> = ladder
            .iter()
            .zip(ps)
            .map(|(&pair, p)| comp(pair, -0.5, p))
            .collect();
        assert_eq!(emit_figure_data(&comps, 0.05, true).len(), 5);
        assert_eq!(emit_figure_data(&comps, 0.05, false).len(), 7);
        assert_eq!(emit_figure_data(&comps, 1.0, true).len(), 7);
        assert!(emit_figure_data(&[], 0.05, true).is_empty());
    }

    #[test]
    fn empty_arm_is_infeasible() {
        let rows: Vec<PanelRow> = Vec::new();
        let out = run_band_comparisons(
            &rows,
            &default_ladder()[..2],
            &default_formula(),
            &DesignOptions::default(),
            &EstimationOptions::default(),
        );
        assert_eq!(out.len(), 2);
        assert!(out
            .iter()
            .all(|c| c.result.is_none() && c.infeasible_reason.is_some()));
        assert_eq!(out[0].pair, default_ladder()[0]);
    }
}
