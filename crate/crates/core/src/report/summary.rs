//! Descriptive statistics of the panel and the category x period balance table.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::format::sig6;
use crate::panel::{Category, PanelRow, Period};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub column: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub sd: f64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of one column; `None` when there are no values.
pub fn describe(column: &str, values: &[f64]) -> Option<SummaryRow> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(SummaryRow {
        column: column.to_string(),
        n,
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        mean,
        q3: quantile(&v, 0.75),
        max: v[n - 1],
        sd,
    })
}

type Getter = fn(&PanelRow) -> Option<f64>;

const NUMERIC: &[(&str, Getter)] = &[
    ("age", |r| Some(f64::from(r.age))),
    ("swim_out_s", |r| Some(r.swim_out_s)),
    ("total_s", |r| Some(r.total_s)),
    ("rank", |r| Some(r.rank)),
    ("group_size", |r| r.group.map(|g| f64::from(g.group_size))),
    ("position", |r| r.group.map(|g| f64::from(g.position))),
    ("loo", |r| r.loo),
    ("projected", |r| r.projected),
];

/// One row per numeric panel column that has at least one value.
pub fn summary_stats(panel: &[PanelRow]) -> Vec<SummaryRow> {
    NUMERIC
        .iter()
        .filter_map(|(name, get)| {
            let values: Vec<f64> = panel.iter().filter_map(get).collect();
            describe(name, &values)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub category: Category,
    pub period: Period,
    pub mean_swim_out_s: f64,
    pub sd_swim_out_s: f64,
    pub n: usize,
}

/// Swim-out mean, SD and count per (category, period) cell present in the panel.
pub fn balance(panel: &[PanelRow]) -> Vec<BalanceRow> {
    let mut cells: BTreeMap<(Category, Period), Vec<f64>> = BTreeMap::new();
    for r in panel {
        cells
            .entry((r.category, r.period))
            .or_default()
            .push(r.swim_out_s);
    }
    cells
        .into_iter()
        .map(|((category, period), v)| {
            let d = describe("swim_out_s", &v).expect("non-empty cell");
            BalanceRow {
                category,
                period,
                mean_swim_out_s: d.mean,
                sd_swim_out_s: d.sd,
                n: d.n,
            }
        })
        .collect()
}

fn comments<W: Write>(out: &mut W, comment: &[String]) -> std::io::Result<()> {
    for c in comment {
        writeln!(out, "# {c}")?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(
    mut out: W,
    rows: &[SummaryRow],
    comment: &[String],
) -> std::io::Result<()> {
    comments(&mut out, comment)?;
    writeln!(out, "column,n,min,q1,median,mean,q3,max,sd")?;
    for r in rows {
        let nums = [r.min, r.q1, r.median, r.mean, r.q3, r.max, r.sd].map(sig6);
        writeln!(out, "{},{},{}", r.column, r.n, nums.join(","))?;
    }
    Ok(())
}

pub fn write_balance<W: Write>(
    mut out: W,
    rows: &[BalanceRow],
    comment: &[String],
) -> std::io::Result<()> {
    comments(&mut out, comment)?;
    writeln!(out, "category,period,mean_swim_out_s,sd_swim_out_s,n")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.category.as_str(),
            r.period.as_str(),
            sig6(r.mean_swim_out_s),
            sig6(r.sd_swim_out_s),
            r.n
        )?;
    }
    Ok(())
}
