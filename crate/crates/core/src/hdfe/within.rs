//! Alternating projections onto the orthogonal complement of the fixed-effect
//! dummy spans.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HdfeError;

/// A categorical variable as dense level indices `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub index: Vec<usize>,
    pub levels: usize,
}

impl Factor {
    /// Dense-code arbitrary keys in sorted key order.
    pub fn from_keys<K: Ord + Clone>(name: &str, keys: &[K]) -> Self {
        let mut sorted: Vec<K> = keys.to_vec();
        sorted.sort();
        sorted.dedup();
        let index = keys
            .iter()
            .map(|k| sorted.binary_search(k).expect("key present"))
            .collect();
        Factor {
            name: name.to_string(),
            index,
            levels: sorted.len(),
        }
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.levels];
        for &i in &self.index {
            c[i] += 1;
        }
        c
    }

    /// Levels of `(self, other)` pairs, used for two-way clustering.
    pub fn intersect(&self, other: &Factor) -> Factor {
        let keys: Vec<(usize, usize)> = self
            .index
            .iter()
            .copied()
            .zip(other.index.iter().copied())
            .collect();
        Factor::from_keys(&format!("{}&{}", self.name, other.name), &keys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsorbOptions {
    /// Convergence bound on the largest entry change over one full cycle.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for AbsorbOptions {
    fn default() -> Self {
        AbsorbOptions {
            tolerance: 1e-10,
            max_iter: 10_000,
        }
    }
}

struct Projector<'a> {
    index: &'a [usize],
    inv_counts: Vec<f64>,
    sums: Vec<f64>,
}

impl<'a> Projector<'a> {
    fn new(f: &'a Factor) -> Self {
        let inv_counts = f
            .counts()
            .into_iter()
            .map(|c| if c > 0 { 1.0 / c as f64 } else { 0.0 })
            .collect();
        Projector {
            index: &f.index,
            inv_counts,
            sums: vec![0.0; f.levels],
        }
    }

    fn apply(&mut self, x: &mut [f64]) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        for (&g, &v) in self.index.iter().zip(x.iter()) {
            self.sums[g] += v;
        }
        for (s, w) in self.sums.iter_mut().zip(&self.inv_counts) {
            *s *= w;
        }
        for (&g, v) in self.index.iter().zip(x.iter_mut()) {
            *v -= self.sums[g];
        }
    }
}

/// Demean one column in place. Returns cycles used, or the last change on
/// failure.
fn demean_column(x: &mut [f64], factors: &[Factor], opts: &AbsorbOptions) -> Result<usize, f64> {
    let mut proj: Vec<Projector> = factors.iter().map(Projector::new).collect();
    match proj.len() {
        0 => return Ok(0),
        1 => {
            proj[0].apply(x);
            return Ok(1);
        }
        _ => {}
    }
    let mut prev = x.to_vec();
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        for p in proj.iter_mut() {
            p.apply(x);
        }
        change = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < opts.tolerance {
            return Ok(it);
        }
        prev.copy_from_slice(x);
    }
    Err(change)
}

/// Residualize every column on the dummy spans of `factors`.
///
/// Returns the transformed matrix and the largest number of cycles any
/// column needed.
pub fn within_transform(
    m: &DMatrix<f64>,
    factors: &[Factor],
    opts: &AbsorbOptions,
) -> Result<(DMatrix<f64>, usize), HdfeError> {
    let n = m.nrows();
    for f in factors {
        assert_eq!(
            f.index.len(),
            n,
            "factor `{}` does not cover every row",
            f.name
        );
    }
    assert!(opts.tolerance > 0.0, "tolerance must be positive");
    let results: Vec<(Vec<f64>, Result<usize, f64>)> = (0..m.ncols())
        .into_par_iter()
        .map(|j| {
            let mut col: Vec<f64> = m.column(j).iter().copied().collect();
            let r = demean_column(&mut col, factors, opts);
            (col, r)
        })
        .collect();
    let mut out = DMatrix::zeros(n, m.ncols());
    let mut iters = 0;
    let mut worst: Option<(usize, f64)> = None;
    for (j, (col, r)) in results.into_iter().enumerate() {
        match r {
            Ok(it) => iters = iters.max(it),
            Err(change) => {
                if worst.is_none_or(|(_, w)| change > w) {
                    worst = Some((j, change));
                }
            }
        }
        out.column_mut(j).copy_from_slice(&col);
    }
    if let Some((column, max_change)) = worst {
        return Err(HdfeError::NotConverged { column, max_change });
    }
    Ok((out, iters))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Rank of the combined dummy span of `factors`.
///
/// Exact for up to two factors (levels minus connected components of the
/// bipartite level graph); each further factor is charged one redundancy.
pub fn absorbed_dof(factors: &[Factor]) -> usize {
    let levels: usize = factors.iter().map(|f| f.levels).sum();
    match factors {
        [] => 0,
        [_] => levels,
        [a, b, rest @ ..] => {
            let mut parent: Vec<usize> = (0..a.levels + b.levels).collect();
            for (&i, &j) in a.index.iter().zip(&b.index) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, a.levels + j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
            let mut used = vec![false; a.levels + b.levels];
            for (&i, &j) in a.index.iter().zip(&b.index) {
                used[i] = true;
                used[a.levels + j] = true;
            }
            let components = (0..parent.len())
                .filter(|&k| used[k] && find(&mut parent, k) == k)
                .count();
            levels - components - rest.len()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(name: &str, idx: &[usize]) -> Factor {
        Factor::from_keys(name, idx)
    }

    #[test]
    fn one_factor_single_pass() {
        let m = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 10.0, 20.0]);
        let (w, it) =
            within_transform(&m, &[f("g", &[0, 0, 1, 1])], &AbsorbOptions::default()).unwrap();
        assert_eq!(it, 1);
        assert_eq!(w.as_slice(), &[-1.0, 1.0, -5.0, 5.0]);
    }

    #[test]
    fn constant_column_vanishes() {
        let m = DMatrix::from_element(6, 1, 7.5);
        let fs = [f("a", &[0, 1, 2, 0, 1, 2]), f("b", &[0, 0, 1, 1, 0, 1])];
        let (w, _) = within_transform(&m, &fs, &AbsorbOptions::default()).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn non_convergence_names_column() {
        let m = DMatrix::from_fn(6, 2, |i, j| (i * (j + 1)) as f64);
        let fs = [f("a", &[0, 1, 2, 0, 1, 2]), f("b", &[0, 0, 1, 1, 2, 2])];
        let opts = AbsorbOptions {
            tolerance: 1e-300,
            max_iter: 2,
        };
        assert!(matches!(
            within_transform(&m, &fs, &opts),
            Err(HdfeError::NotConverged { .. })
        ));
    }

    #[test]
    fn dof_counts_components() {
        // two disconnected blocks: levels 2 + 2, components 2
        let a = f("a", &[0, 0, 1, 1]);
        let b = f("b", &[0, 0, 1, 1]);
        assert_eq!(absorbed_dof(&[a.clone(), b.clone()]), 2);
        let b2 = f("b", &[0, 1, 0, 1]);
        assert_eq!(absorbed_dof(&[a.clone(), b2.clone()]), 3);
        assert_eq!(absorbed_dof(std::slice::from_ref(&a)), 2);
        assert_eq!(absorbed_dof(&[a, b2, f("c", &[0, 1, 2, 3])]), 3 + 4 - 1);
    }

    #[test]
    fn from_keys_is_sorted_dense() {
        let g = Factor::from_keys("x", &["b", "a", "b", "c"]);
        assert_eq!(g.index, vec![1, 0, 1, 2]);
        assert_eq!(g.levels, 3);
        assert_eq!(g.counts(), vec![1, 2, 1]);
    }
}
