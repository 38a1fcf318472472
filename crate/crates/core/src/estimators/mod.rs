//! OLS and 2SLS on absorbed designs.

pub mod covariance;
mod linalg;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

use crate::hdfe::{
    absorbed_dof, within_transform, AbsorbOptions, CovarianceSpec, DesignMatrices, HdfeError,
    RowAudit,
};

pub use covariance::SmallSample;
use covariance::{covariance, CovInput};
use linalg::{dependent_columns, least_squares};

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Hdfe(#[from] HdfeError),
    #[error("collinear regressors: {0}")]
    Collinear(String),
    #[error("no regressors left to estimate")]
    NoRegressors,
    #[error("design has an endogenous term; use 2SLS")]
    EndogenousInOls,
    #[error("design has no endogenous term and instruments")]
    NotIv,
    #[error("{n} observations cannot identify {k} parameters")]
    TooFewObservations { n: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HausmanForm {
    /// t-test on the first-stage residual added to the structural equation.
    #[default]
    ControlFunction,
    /// `(b_iv - b_ols)^2 / (V_iv - V_ols)` on the endogenous coefficient.
    Contrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationOptions {
    pub absorb: AbsorbOptions,
    pub small_sample: SmallSample,
    /// First-stage F below this raises a weak-instrument warning.
    pub weak_f_threshold: f64,
    pub hausman: HausmanForm,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            absorb: AbsorbOptions::default(),
            small_sample: SmallSample::default(),
            weak_f_threshold: 10.0,
            hausman: HausmanForm::ControlFunction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub vcov: Vec<Vec<f64>>,
    pub covariance: CovarianceSpec,
    pub small_sample: SmallSample,
    /// Applied small-sample factor per variance component.
    pub ssc_factors: Vec<f64>,
    /// Degrees of freedom of the t reference distribution.
    pub inference_df: f64,
    pub n_obs: usize,
    pub n_slopes: usize,
    pub absorbed_dof: usize,
    pub rss: f64,
    pub rmse: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub within_r2: f64,
    pub factor_levels: Vec<(String, usize)>,
    pub n_clusters: Vec<(String, usize)>,
    pub absorb_iterations: usize,
    pub audit: RowAudit,
}

impl RegressionResult {
    pub fn coef(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    /// Residual degrees of freedom, `n - slopes - absorbed levels`.
    pub fn df_resid(&self) -> usize {
        self.n_obs - self.n_slopes - self.absorbed_dof
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WuHausman {
    pub form: HausmanForm,
    pub statistic: f64,
    pub p: f64,
    /// The endogenous column equals its first-stage fit; the test has no
    /// content and the regressor is exogenous by construction.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvResult {
    pub second_stage: RegressionResult,
    pub first_stage: RegressionResult,
    /// The same equation by OLS, endogenous term treated as exogenous.
    pub ols: RegressionResult,
    pub first_stage_f: f64,
    pub first_stage_p: f64,
    pub first_stage_df: (f64, f64),
    pub wu_hausman: WuHausman,
    pub weak_instrument: bool,
    pub warnings: Vec<String>,
}

/// Percent change implied by a log-point coefficient.
pub fn semi_elasticity(beta: f64) -> f64 {
    100.0 * beta.exp_m1()
}

/// Two-sided p-value of a t statistic.
pub fn t_pvalue(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    let dist = StudentsT::new(0.0, 1.0, df.max(1.0)).expect("valid t distribution");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Upper-tail p-value of an F statistic.
pub fn f_pvalue(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() || f <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2.max(1.0))
        .expect("valid F distribution")
        .sf(f)
}

struct Absorbed {
    y: DVector<f64>,
    exog: DMatrix<f64>,
    endog: Option<DVector<f64>>,
    z: DMatrix<f64>,
    absorbed: usize,
    iterations: usize,
    tss: f64,
    tss_within: f64,
}

/// Relative norm below which a demeaned column counts as absorbed.
const ABSORBED_TOL: f64 = 1e-8;

fn absorb(d: &DesignMatrices, opts: &EstimationOptions) -> Result<Absorbed, EstimationError> {
    let n = d.n();
    let kx = d.exog.ncols();
    let ke = usize::from(d.endog.is_some());
    let q = d.instruments.ncols();
    let mut stacked = DMatrix::zeros(n, 1 + kx + ke + q);
    stacked.column_mut(0).copy_from(&d.y);
    stacked.columns_mut(1, kx).copy_from(&d.exog);
    if let Some(e) = &d.endog {
        stacked.column_mut(1 + kx).copy_from(e);
    }
    stacked
        .columns_mut(1 + kx + ke, q)
        .copy_from(&d.instruments);
    let (w, iterations) = within_transform(&stacked, &d.absorb, &opts.absorb)?;

    let mean = d.y.mean();
    let tss = d.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let tss_within = if d.absorb.is_empty() {
        tss
    } else {
        w.column(0).norm_squared()
    };

    if !d.absorb.is_empty() {
        let names: Vec<&str> = d
            .exog_names
            .iter()
            .chain(d.endog_name.iter())
            .chain(d.instrument_names.iter())
            .map(String::as_str)
            .collect();
        let gone: Vec<&str> = (0..names.len())
            .filter(|&j| w.column(j + 1).norm() <= ABSORBED_TOL * stacked.column(j + 1).norm())
            .map(|j| names[j])
            .collect();
        if !gone.is_empty() {
            let fe: Vec<&str> = d.absorb.iter().map(|f| f.name.as_str()).collect();
            return Err(EstimationError::Collinear(format!(
                "{} absorbed by fixed effects ({})",
                gone.join(", "),
                fe.join(" ")
            )));
        }
    }

    Ok(Absorbed {
        y: w.column(0).into_owned(),
        exog: w.columns(1, kx).into_owned(),
        endog: d.endog.as_ref().map(|_| w.column(1 + kx).into_owned()),
        z: w.columns(1 + kx + ke, q).into_owned(),
        absorbed: absorbed_dof(&d.absorb),
        iterations,
        tss,
        tss_within,
    })
}

fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<(), EstimationError> {
    if x.ncols() == 0 {
        return Err(EstimationError::NoRegressors);
    }
    let dep = dependent_columns(x);
    if dep.is_empty() {
        return Ok(());
    }
    let msg: Vec<String> = dep
        .iter()
        .map(|(j, on)| {
            if on.is_empty() {
                format!("{} is identically zero", names[*j])
            } else {
                let on: Vec<&str> = on.iter().map(|i| names[*i].as_str()).collect();
                format!("{} is a combination of {}", names[*j], on.join(", "))
            }
        })
        .collect();
    Err(EstimationError::Collinear(msg.join("; ")))
}

fn hcat(cols: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = cols[0].nrows();
    let k: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut at = 0;
    for c in cols {
        out.columns_mut(at, c.ncols()).copy_from(c);
        at += c.ncols();
    }
    out
}

fn as_col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

struct Fit<'a> {
    coef: DVector<f64>,
    bread: DMatrix<f64>,
    /// Regressors entering the scores.
    score_x: &'a DMatrix<f64>,
    resid: DVector<f64>,
    names: Vec<String>,
}

fn finish(
    fit: Fit,
    d: &DesignMatrices,
    a: &Absorbed,
    opts: &EstimationOptions,
) -> Result<RegressionResult, EstimationError> {
    let n = d.n();
    let slopes = fit.names.len();
    if n <= slopes + a.absorbed {
        return Err(EstimationError::TooFewObservations {
            n,
            k: slopes + a.absorbed,
        });
    }
    let input = CovInput {
        x: fit.score_x,
        resid: &fit.resid,
        bread: &fit.bread,
        slopes,
        absorbed: a.absorbed,
    };
    let cov = covariance(&d.se, &d.clusters, &input, &opts.small_sample);
    let coefficients = fit
        .names
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let estimate = fit.coef[j];
            let se = cov.vcov[(j, j)].sqrt();
            let t = estimate / se;
            Coefficient {
                term: term.clone(),
                estimate,
                se,
                t,
                p: t_pvalue(t, cov.df),
            }
        })
        .collect();
    let rss = fit.resid.norm_squared();
    let nf = n as f64;
    let k_full = (slopes + a.absorbed) as f64;
    let r2 = 1.0 - rss / a.tss;
    // without absorption, the intercept is one of the slopes
    let adj_r2 = 1.0 - (rss / (nf - k_full)) / (a.tss / (nf - 1.0));
    Ok(RegressionResult {
        coefficients,
        vcov: cov
            .vcov
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        covariance: d.se.clone(),
        small_sample: opts.small_sample,
        ssc_factors: cov.factors,
        inference_df: cov.df,
        n_obs: n,
        n_slopes: slopes,
        absorbed_dof: a.absorbed,
        rss,
        rmse: (rss / nf).sqrt(),
        r2,
        adj_r2,
        within_r2: 1.0 - rss / a.tss_within,
        factor_levels: d
            .absorb
            .iter()
            .map(|f| (f.name.clone(), f.levels))
            .collect(),
        n_clusters: cov.n_clusters,
        absorb_iterations: a.iterations,
        audit: d.audit.clone(),
    })
}

fn ls_fit<'a>(
    x: &'a DMatrix<f64>,
    y: &DVector<f64>,
    names: Vec<String>,
) -> Result<Fit<'a>, EstimationError> {
    check_rank(x, &names)?;
    let ls = least_squares(x, y);
    let resid = y - x * &ls.coef;
    Ok(Fit {
        coef: ls.coef,
        bread: ls.bread,
        score_x: x,
        resid,
        names,
    })
}

/// Least squares with fixed effects absorbed.
pub fn ols(
    d: &DesignMatrices,
    opts: &EstimationOptions,
) -> Result<RegressionResult, EstimationError> {
    if d.endog.is_some() {
        return Err(EstimationError::EndogenousInOls);
    }
    let a = absorb(d, opts)?;
    let fit = ls_fit(&a.exog, &a.y, d.exog_names.clone())?;
    finish(fit, d, &a, opts)
}

/// Wald F on a block of coefficients.
fn wald_f(r: &RegressionResult, idx: &[usize]) -> f64 {
    let q = idx.len();
    let b = DVector::from_iterator(q, idx.iter().map(|&i| r.coefficients[i].estimate));
    let v = DMatrix::from_fn(q, q, |i, j| r.vcov[idx[i]][idx[j]]);
    match v.try_inverse() {
        Some(inv) => (b.transpose() * inv * &b)[(0, 0)] / q as f64,
        None => 0.0,
    }
}

/// Two-stage least squares with one endogenous regressor.
pub fn tsls(d: &DesignMatrices, opts: &EstimationOptions) -> Result<IvResult, EstimationError> {
    let (Some(endog_name), true) = (&d.endog_name, d.instruments.ncols() > 0) else {
        return Err(EstimationError::NotIv);
    };
    let a = absorb(d, opts)?;
    let x = a.endog.as_ref().expect("endogenous column present");
    let q = a.z.ncols();

    // first stage
    let w1 = hcat(&[&a.z, &a.exog]);
    let names1: Vec<String> = d
        .instrument_names
        .iter()
        .chain(&d.exog_names)
        .cloned()
        .collect();
    let fs_fit = ls_fit(&w1, x, names1)?;
    let v_hat = fs_fit.resid.clone();
    let first_stage = finish(fs_fit, d, &a, opts)?;
    let f = wald_f(&first_stage, &(0..q).collect::<Vec<_>>());
    let fs_df = (q as f64, first_stage.inference_df);
    let f_p = f_pvalue(f, fs_df.0, fs_df.1);

    // second stage on the fitted endogenous column; residuals use the actual one
    let x_hat = x - &v_hat;
    let names2: Vec<String> = std::iter::once(endog_name.clone())
        .chain(d.exog_names.iter().cloned())
        .collect();
    let w2 = hcat(&[&as_col(&x_hat), &a.exog]);
    check_rank(&w2, &names2)?;
    let ls = least_squares(&w2, &a.y);
    let x_full = hcat(&[&as_col(x), &a.exog]);
    let resid = &a.y - &x_full * &ls.coef;
    let second_stage = finish(
        Fit {
            coef: ls.coef,
            bread: ls.bread,
            score_x: &w2,
            resid,
            names: names2.clone(),
        },
        d,
        &a,
        opts,
    )?;

    let ols_fit = ls_fit(&x_full, &a.y, names2.clone())?;
    let ols = finish(ols_fit, d, &a, opts)?;

    let degenerate = v_hat.norm() <= 1e-10 * x.norm().max(f64::MIN_POSITIVE);
    let wu_hausman = if degenerate {
        WuHausman {
            form: opts.hausman,
            statistic: 0.0,
            p: 1.0,
            degenerate: true,
        }
    } else {
        match opts.hausman {
            HausmanForm::ControlFunction => {
                let xc = hcat(&[&x_full, &as_col(&v_hat)]);
                let mut names: Vec<String> = names2.clone();
                names.push("(first-stage residual)".into());
                let cf = finish(ls_fit(&xc, &a.y, names)?, d, &a, opts)?;
                let c = cf.coefficients.last().expect("residual term");
                WuHausman {
                    form: HausmanForm::ControlFunction,
                    statistic: c.t * c.t,
                    p: c.p,
                    degenerate: false,
                }
            }
            HausmanForm::Contrast => {
                let diff = second_stage.coefficients[0].estimate - ols.coefficients[0].estimate;
                let var = (second_stage.vcov[0][0] - ols.vcov[0][0]).abs();
                if var > 0.0 {
                    let h = diff * diff / var;
                    let p = ChiSquared::new(1.0).expect("chi2(1)").sf(h);
                    WuHausman {
                        form: HausmanForm::Contrast,
                        statistic: h,
                        p,
                        degenerate: false,
                    }
                } else {
                    WuHausman {
                        form: HausmanForm::Contrast,
                        statistic: 0.0,
                        p: 1.0,
                        degenerate: true,
                    }
                }
            }
        }
    };

    let weak_instrument = f < opts.weak_f_threshold;
    let mut warnings = Vec::new();
    if weak_instrument {
        warnings.push(format!(
            "weak instrument: first-stage F = {f:.3} is below {}",
            opts.weak_f_threshold
        ));
    }
    Ok(IvResult {
        second_stage,
        first_stage,
        ols,
        first_stage_f: f,
        first_stage_p: f_p,
        first_stage_df: fs_df,
        wu_hausman,
        weak_instrument,
        warnings,
    })
}

/// Either estimator, chosen by whether the design has an endogenous term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Estimate {
    Ols(RegressionResult),
    Iv(Box<IvResult>),
}

impl Estimate {
    /// The structural equation.
    pub fn main(&self) -> &RegressionResult {
        match self {
            Estimate::Ols(r) => r,
            Estimate::Iv(iv) => &iv.second_stage,
        }
    }

    pub fn iv(&self) -> Option<&IvResult> {
        match self {
            Estimate::Ols(_) => None,
            Estimate::Iv(iv) => Some(iv),
        }
    }
}

pub fn estimate(d: &DesignMatrices, opts: &EstimationOptions) -> Result<Estimate, EstimationError> {
    if d.endog.is_some() {
        tsls(d, opts).map(|r| Estimate::Iv(Box::new(r)))
    } else {
        ols(d, opts).map(Estimate::Ols)
    }
}
