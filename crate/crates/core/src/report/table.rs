//! Regression tables: one column per specification, coefficient rows with
//! standard errors in parentheses, then a diagnostics block.
//!
//! Tables only format numbers already stored in result records.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::format::fixed;
use super::{ReportError, ResultRecord};
use crate::estimators::{Coefficient, Estimate};

/// Significance thresholds for one, two and three stars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarConvention {
    /// `* p<0.1, ** p<0.05, *** p<0.01`.
    #[default]
    Conventional,
    /// `* p<0.05, ** p<0.01, *** p<0.001`.
    Strict,
}

impl StarConvention {
    pub fn thresholds(self) -> [f64; 3] {
        match self {
            StarConvention::Conventional => [0.1, 0.05, 0.01],
            StarConvention::Strict => [0.05, 0.01, 0.001],
        }
    }

    pub fn stars(self, p: f64) -> &'static str {
        let [one, two, three] = self.thresholds();
        if p < three {
            "***"
        } else if p < two {
            "**"
        } else if p < one {
            "*"
        } else {
            ""
        }
    }

    pub fn legend(self) -> String {
        let [one, two, three] = self.thresholds();
        format!("* p<{one}, ** p<{two}, *** p<{three}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

fn default_decimals() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableLayout {
    pub name: String,
    /// Column order. Empty means every result in record order.
    #[serde(default)]
    pub specs: Vec<String>,
    #[serde(default)]
    pub stars: StarConvention,
    /// Coefficient rows to show; all terms in first-seen order when absent.
    #[serde(default)]
    pub terms: Option<Vec<String>>,
    #[serde(default = "default_decimals")]
    pub decimals: usize,
}

impl TableLayout {
    pub fn new(name: &str) -> Self {
        TableLayout {
            name: name.into(),
            specs: Vec::new(),
            stars: StarConvention::default(),
            terms: None,
            decimals: 3,
        }
    }
}

/// `estimate` + stars + ` (se)`, e.g. `-0.972*** (0.185)`.
pub fn coefficient_cell(c: &Coefficient, stars: StarConvention, decimals: usize) -> String {
    format!(
        "{}{} ({})",
        fixed(c.estimate, decimals),
        stars.stars(c.p),
        fixed(c.se, decimals)
    )
}

fn select<'a>(
    results: &'a [ResultRecord],
    layout: &TableLayout,
) -> Result<Vec<&'a ResultRecord>, ReportError> {
    if layout.specs.is_empty() {
        return Ok(results.iter().collect());
    }
    layout
        .specs
        .iter()
        .map(|s| {
            results
                .iter()
                .find(|r| &r.name == s)
                .ok_or_else(|| ReportError::UnknownSpec {
                    table: layout.name.clone(),
                    spec: s.clone(),
                })
        })
        .collect()
}

fn table_rows(cols: &[&ResultRecord], layout: &TableLayout) -> Vec<Vec<String>> {
    let terms: Vec<String> = match &layout.terms {
        Some(t) => t.clone(),
        None => {
            let mut seen: Vec<String> = Vec::new();
            for r in cols {
                for c in &r.estimate.main().coefficients {
                    if !seen.contains(&c.term) {
                        seen.push(c.term.clone());
                    }
                }
            }
            seen
        }
    };
    let mut rows = Vec::new();
    for t in &terms {
        let mut row = vec![t.clone()];
        row.extend(cols.iter().map(|r| {
            r.estimate
                .main()
                .coef(t)
                .map(|c| coefficient_cell(c, layout.stars, layout.decimals))
                .unwrap_or_default()
        }));
        rows.push(row);
    }
    type Diag = fn(&Estimate, usize) -> String;
    let diagnostics: [(&str, Diag); 8] = [
        ("First-stage F", |e, _| {
            e.iv()
                .map(|iv| fixed(iv.first_stage_f, 2))
                .unwrap_or_default()
        }),
        ("Wu-Hausman p-value", |e, _| {
            e.iv()
                .map(|iv| fixed(iv.wu_hausman.p, 3))
                .unwrap_or_default()
        }),
        ("Observations", |e, _| e.main().n_obs.to_string()),
        ("Within R2", |e, d| fixed(e.main().within_r2, d)),
        ("Adj. R2", |e, d| fixed(e.main().adj_r2, d)),
        ("RMSE", |e, d| fixed(e.main().rmse, d)),
        ("Fixed effects", |e, _| {
            let names: Vec<&str> = e
                .main()
                .factor_levels
                .iter()
                .map(|(n, _)| n.as_str())
                .collect();
            if names.is_empty() {
                "none".into()
            } else {
                names.join(" + ")
            }
        }),
        ("Standard errors", |e, _| e.main().covariance.to_string()),
    ];
    for (label, f) in diagnostics {
        let mut row = vec![label.to_string()];
        row.extend(cols.iter().map(|r| f(&r.estimate, layout.decimals)));
        rows.push(row);
    }
    rows
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Render the layout over `results`. A layout naming an unknown
/// specification is an error; no results give a header-only table.
pub fn emit_table<W: Write>(
    mut out: W,
    results: &[ResultRecord],
    layout: &TableLayout,
    format: TableFormat,
) -> Result<(), ReportError> {
    let cols = select(results, layout)?;
    let mut header = vec!["term".to_string()];
    header.extend(cols.iter().map(|r| r.name.clone()));
    let rows = if cols.is_empty() {
        Vec::new()
    } else {
        table_rows(&cols, layout)
    };
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&header).map_err(ReportError::from_csv)?;
            for r in &rows {
                w.write_record(r).map_err(ReportError::from_csv)?;
            }
            w.flush()?;
        }
        TableFormat::Markdown => {
            let line = |cells: &[String]| {
                format!(
                    "| {} |",
                    cells
                        .iter()
                        .map(|c| md_escape(c))
                        .collect::<Vec<_>>()
                        .join(" | ")
                )
            };
            writeln!(out, "{}", line(&header))?;
            let sep: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { ":--".into() } else { "--:".into() })
                .collect();
            writeln!(out, "| {} |", sep.join(" | "))?;
            for r in &rows {
                writeln!(out, "{}", line(r))?;
            }
            if !rows.is_empty() {
                writeln!(out)?;
                writeln!(
                    out,
                    "Standard errors in parentheses. {}",
                    layout.stars.legend()
                )?;
            }
        }
    }
    Ok(())
}
