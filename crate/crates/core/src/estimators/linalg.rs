//! Least squares by Householder QR, plus a collinearity check.

use nalgebra::{DMatrix, DVector};

/// Relative residual norm below which a column counts as dependent.
const RANK_TOL: f64 = 1e-9;

pub(crate) struct LsFit {
    pub coef: DVector<f64>,
    /// `(X'X)^-1`, built from `R^-1`.
    pub bread: DMatrix<f64>,
}

/// Solve `min |y - X b|` for full-column-rank `X`.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> LsFit {
    let k = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .expect("full rank checked by caller");
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .expect("full rank checked by caller");
    let bread = &rinv * rinv.transpose();
    LsFit { coef, bread }
}

/// Columns that lie in the span of earlier columns, each paired with the
/// earlier columns it loads on.
///
/// Columns are scaled to unit norm and orthogonalized in order with two
/// passes of modified Gram-Schmidt; a zero column is dependent on nothing.
pub(crate) fn dependent_columns(x: &DMatrix<f64>) -> Vec<(usize, Vec<usize>)> {
    let mut basis: Vec<(usize, DVector<f64>)> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            out.push((j, vec![]));
            continue;
        }
        let mut v = col / norm;
        let mut weights = vec![0.0; basis.len()];
        for _ in 0..2 {
            for (w, (_, q)) in weights.iter_mut().zip(&basis) {
                let c = q.dot(&v);
                *w += c;
                v.axpy(-c, q, 1.0);
            }
        }
        let rest = v.norm();
        if rest < RANK_TOL {
            let involved = basis
                .iter()
                .zip(&weights)
                .filter(|(_, w)| w.abs() > 1e-8)
                .map(|((i, _), _)| *i)
                .collect();
            out.push((j, involved));
        } else {
            basis.push((j, v / rest));
        }
    }
    out
}
