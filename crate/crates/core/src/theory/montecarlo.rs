//! Repeated simulate-and-estimate runs against the planted truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::dgp::{simulate_panel, DgpConfig};
use super::TheoryError;
use crate::estimators::{tsls, EstimationOptions};
use crate::hdfe::{build_design, DesignOptions, FormulaSpec};
use crate::instruments::{attach_loo, AbilityScale};

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep`; independent of thread count and run order.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    splitmix64(master ^ splitmix64(rep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSpec {
    pub dgp: DgpConfig,
    pub replications: usize,
    pub master_seed: u64,
    /// Must be an IV formula; the OLS comparison treats its endogenous term
    /// as exogenous.
    pub formula: FormulaSpec,
    /// Test size for coverage and Wu-Hausman rejection.
    pub level: f64,
    pub estimation: EstimationOptions,
    pub design: DesignOptions,
}

impl McSpec {
    /// Absorb athlete and event effects, instrument position with the LOO
    /// group mean, HC1 errors. The default panel has only 20 events, too few
    /// for event clustering.
    pub fn standard(dgp: DgpConfig, replications: usize, master_seed: u64) -> Self {
        let formula = FormulaSpec::parse("y ~ | fe: athlete event | iv: position ~ loo | se: hc1")
            .expect("static formula");
        McSpec {
            dgp,
            replications,
            master_seed,
            formula,
            level: 0.05,
            estimation: EstimationOptions::default(),
            design: DesignOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    pub n_obs: usize,
    pub ols_beta: f64,
    pub ols_se: f64,
    pub iv_beta: f64,
    pub iv_se: f64,
    pub iv_covers: bool,
    pub first_stage_f: f64,
    pub wu_hausman_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub replications: usize,
    pub failures: Vec<(usize, String)>,
    pub truth: f64,
    pub mean_n_obs: f64,
    pub ols_mean: f64,
    pub ols_bias: f64,
    pub ols_mean_se: f64,
    pub iv_mean: f64,
    pub iv_bias: f64,
    pub iv_mean_se: f64,
    pub iv_sd: f64,
    pub iv_coverage: f64,
    pub mean_first_stage_f: f64,
    pub wu_hausman_rejection_rate: f64,
}

fn one_rep(spec: &McSpec, rep: usize) -> Result<RepResult, String> {
    let seed = replication_seed(spec.master_seed, rep as u64);
    let mut sim = simulate_panel(&spec.dgp.with_seed(seed)).map_err(|e| e.to_string())?;
    attach_loo(&mut sim.rows, AbilityScale::Seconds);
    let design = build_design(&sim.rows, &spec.formula, &spec.design).map_err(|e| e.to_string())?;
    let iv = tsls(&design, &spec.estimation).map_err(|e| e.to_string())?;
    let b_iv = &iv.second_stage.coefficients[0];
    let b_ols = &iv.ols.coefficients[0];
    let crit = StudentsT::new(0.0, 1.0, iv.second_stage.inference_df)
        .expect("valid t")
        .inverse_cdf(1.0 - spec.level / 2.0);
    Ok(RepResult {
        rep,
        seed,
        n_obs: iv.second_stage.n_obs,
        ols_beta: b_ols.estimate,
        ols_se: b_ols.se,
        iv_beta: b_iv.estimate,
        iv_se: b_iv.se,
        iv_covers: ((b_iv.estimate - spec.dgp.beta_treat) / b_iv.se).abs() <= crit,
        first_stage_f: iv.first_stage_f,
        wu_hausman_p: iv.wu_hausman.p,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Run every replication (in parallel, reported in replication order).
pub fn run_monte_carlo(spec: &McSpec) -> Result<(Vec<RepResult>, McSummary), TheoryError> {
    spec.dgp.validate()?;
    if !spec.formula.is_iv() {
        return Err(TheoryError::InvalidConfig(
            "Monte Carlo formula must have an iv section".into(),
        ));
    }
    if spec.replications == 0 {
        return Err(TheoryError::InvalidConfig(
            "replications must be positive".into(),
        ));
    }
    let outcomes: Vec<Result<RepResult, String>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| one_rep(spec, rep))
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reps.push(r),
            Err(e) => failures.push((rep, e)),
        }
    }
    if reps.is_empty() {
        return Err(TheoryError::InvalidConfig(format!(
            "every replication failed; first error: {}",
            failures[0].1
        )));
    }
    let truth = spec.dgp.beta_treat;
    let k = reps.len() as f64;
    let iv_mean = mean(reps.iter().map(|r| r.iv_beta));
    let iv_var = reps
        .iter()
        .map(|r| (r.iv_beta - iv_mean).powi(2))
        .sum::<f64>()
        / (k - 1.0).max(1.0);
    let ols_mean = mean(reps.iter().map(|r| r.ols_beta));
    let summary = McSummary {
        replications: spec.replications,
        failures,
        truth,
        mean_n_obs: mean(reps.iter().map(|r| r.n_obs as f64)),
        ols_mean,
        ols_bias: ols_mean - truth,
        ols_mean_se: mean(reps.iter().map(|r| r.ols_se)),
        iv_mean,
        iv_bias: iv_mean - truth,
        iv_mean_se: mean(reps.iter().map(|r| r.iv_se)),
        iv_sd: iv_var.sqrt(),
        iv_coverage: mean(reps.iter().map(|r| f64::from(u8::from(r.iv_covers)))),
        mean_first_stage_f: mean(reps.iter().map(|r| r.first_stage_f)),
        wu_hausman_rejection_rate: mean(
            reps.iter()
                .map(|r| f64::from(u8::from(r.wu_hausman_p < spec.level))),
        ),
    };
    Ok((reps, summary))
}
