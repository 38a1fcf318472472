//! Sandwich covariances: iid, HC1, one- and two-way cluster (CR1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hdfe::{CovarianceSpec, Factor};

/// Small-sample corrections. The defaults give CR1,
/// `G/(G-1) * (n-1)/(n-k)`, with `k` counting absorbed levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallSample {
    pub cluster_adjustment: bool,
    pub dof_adjustment: bool,
    /// Count absorbed fixed-effect levels in `k`.
    pub count_absorbed: bool,
}

impl Default for SmallSample {
    fn default() -> Self {
        SmallSample {
            cluster_adjustment: true,
            dof_adjustment: true,
            count_absorbed: true,
        }
    }
}

pub(crate) struct CovInput<'a> {
    /// Regressors the residual is orthogonal to (fitted instruments for 2SLS).
    pub x: &'a DMatrix<f64>,
    pub resid: &'a DVector<f64>,
    pub bread: &'a DMatrix<f64>,
    pub slopes: usize,
    pub absorbed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CovOutput {
    pub vcov: DMatrix<f64>,
    /// One factor per variance component.
    pub factors: Vec<f64>,
    pub n_clusters: Vec<(String, usize)>,
    /// Degrees of freedom for t and F reference distributions.
    pub df: f64,
}

fn sandwich(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> DMatrix<f64> {
    bread * meat * bread
}

/// Sum of outer products of per-cluster scores.
pub(crate) fn cluster_meat(x: &DMatrix<f64>, resid: &DVector<f64>, f: &Factor) -> DMatrix<f64> {
    let k = x.ncols();
    let mut scores = DMatrix::<f64>::zeros(f.levels, k);
    for (i, &g) in f.index.iter().enumerate() {
        let e = resid[i];
        for j in 0..k {
            scores[(g, j)] += x[(i, j)] * e;
        }
    }
    scores.transpose() * scores
}

pub(crate) fn covariance(
    spec: &CovarianceSpec,
    clusters: &[Factor],
    input: &CovInput,
    ss: &SmallSample,
) -> CovOutput {
    let n = input.x.nrows();
    let k = if ss.count_absorbed {
        input.slopes + input.absorbed
    } else {
        input.slopes
    };
    let nf = n as f64;
    let kf = k as f64;
    let dof = if ss.dof_adjustment {
        (nf - 1.0) / (nf - kf)
    } else {
        1.0
    };
    let resid_df = (n - (input.slopes + input.absorbed)) as f64;
    let cr1 = |g: usize| {
        let gf = g as f64;
        let c = if ss.cluster_adjustment && g > 1 {
            gf / (gf - 1.0)
        } else {
            1.0
        };
        c * dof
    };
    match spec {
        CovarianceSpec::Iid => {
            let sigma2 = input.resid.norm_squared() / resid_df;
            CovOutput {
                vcov: input.bread * sigma2,
                factors: vec![1.0],
                n_clusters: vec![],
                df: resid_df,
            }
        }
        CovarianceSpec::Hc1 => {
            let mut xe = input.x.clone();
            for (i, mut row) in xe.row_iter_mut().enumerate() {
                row *= input.resid[i];
            }
            let meat = xe.transpose() * xe;
            let c = if ss.dof_adjustment {
                nf / (nf - kf)
            } else {
                1.0
            };
            CovOutput {
                vcov: sandwich(input.bread, &meat) * c,
                factors: vec![c],
                n_clusters: vec![],
                df: resid_df,
            }
        }
        CovarianceSpec::Cluster(_) => {
            let f = &clusters[0];
            let c = cr1(f.levels);
            let v = sandwich(input.bread, &cluster_meat(input.x, input.resid, f)) * c;
            CovOutput {
                vcov: v,
                factors: vec![c],
                n_clusters: vec![(f.name.clone(), f.levels)],
                df: (f.levels as f64 - 1.0).max(1.0),
            }
        }
        CovarianceSpec::TwoWay(_, _) => {
            let (a, b) = (&clusters[0], &clusters[1]);
            let ab = a.intersect(b);
            let (ca, cb, cab) = (cr1(a.levels), cr1(b.levels), cr1(ab.levels));
            let va = sandwich(input.bread, &cluster_meat(input.x, input.resid, a)) * ca;
            let vb = sandwich(input.bread, &cluster_meat(input.x, input.resid, b)) * cb;
            let vab = sandwich(input.bread, &cluster_meat(input.x, input.resid, &ab)) * cab;
            CovOutput {
                vcov: va + vb - vab,
                factors: vec![ca, cb, cab],
                n_clusters: vec![
                    (a.name.clone(), a.levels),
                    (b.name.clone(), b.levels),
                    (ab.name.clone(), ab.levels),
                ],
                df: (a.levels.min(b.levels) as f64 - 1.0).max(1.0),
            }
        }
    }
}
