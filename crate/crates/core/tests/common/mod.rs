#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use draftiv::hdfe::{CovarianceSpec, DesignMatrices, Factor, RowAudit};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

/// Design with named exogenous columns, optional endogenous column and
/// instruments, absorbed factors and iid errors.
pub fn design(
    y: Vec<f64>,
    exog: &[(&str, Vec<f64>)],
    endog: Option<(&str, Vec<f64>)>,
    instruments: &[(&str, Vec<f64>)],
    absorb: Vec<Factor>,
) -> DesignMatrices {
    let n = y.len();
    let cols = |v: &[(&str, Vec<f64>)]| {
        let flat: Vec<f64> = v.iter().flat_map(|(_, c)| c.clone()).collect();
        (
            DMatrix::from_column_slice(n, v.len(), &flat),
            v.iter().map(|(s, _)| s.to_string()).collect::<Vec<_>>(),
        )
    };
    let (exog, exog_names) = cols(exog);
    let (instruments, instrument_names) = cols(instruments);
    DesignMatrices {
        y: DVector::from_vec(y),
        y_name: "y".into(),
        exog,
        exog_names,
        endog_name: endog.as_ref().map(|(s, _)| s.to_string()),
        endog: endog.map(|(_, v)| DVector::from_vec(v)),
        instruments,
        instrument_names,
        absorb,
        clusters: vec![],
        se: CovarianceSpec::Iid,
        audit: RowAudit {
            rows_in: n,
            drops: vec![],
            rows_out: n,
        },
    }
}

/// Reference single linkage: union every pair within `threshold`.
pub fn brute_force_partition(times: &[f64], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let n = times.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (times[i] - times[j]).abs() <= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(i);
    }
    groups.into_values().collect()
}

/// Least squares with explicit dummy columns for every factor, solved by a
/// rank-tolerant SVD. Returns the coefficients of the leading `x` columns.
pub fn dummy_ols(y: &[f64], x: &[Vec<f64>], factors: &[Factor]) -> Vec<f64> {
    let n = y.len();
    let k = x.len();
    let total: usize = k + factors.iter().map(|f| f.levels).sum::<usize>();
    let mut m = DMatrix::<f64>::zeros(n, total);
    for (j, col) in x.iter().enumerate() {
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    let mut off = k;
    for f in factors {
        for (i, &g) in f.index.iter().enumerate() {
            m[(i, off + g)] = 1.0;
        }
        off += f.levels;
    }
    let svd = m.svd(true, true);
    let b = svd
        .solve(&DVector::from_column_slice(y), 1e-9)
        .expect("svd solve");
    b.iter().take(k).copied().collect()
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn read_tree(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
