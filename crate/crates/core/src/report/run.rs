//! The staged pipeline behind `run`, and the per-stage entry points the CLI
//! subcommands share.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ClusterConfig, InstrumentConfig, RunConfig};
use super::summary::{balance, summary_stats, write_balance, write_summary};
use super::table::{emit_table, TableFormat, TableLayout};
use super::{ReportError, ResultRecord};
use crate::bandwagon::{
    emit_figure_data, run_band_comparisons, write_comparisons, write_figure, BandComparison,
};
use crate::estimators::estimate;
use crate::grouping::{cluster_panel, group_filters, GroupFilterAudit};
use crate::hdfe::{build_design, RowAudit};
use crate::ingest::{build_panel, load_tables, write_rejects, IngestAudit, Ingested};
use crate::instruments::{attach_loo, attach_projected};
use crate::panel::{write_panel, PanelRow};
use crate::theory::montecarlo::{run_monte_carlo, McSpec, McSummary, RepResult};

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects output files under one root and remembers their hashes.
#[derive(Debug)]
pub struct OutputTree {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputTree {
    pub fn new(root: &Path) -> Result<Self, ReportError> {
        std::fs::create_dir_all(root)?;
        Ok(OutputTree {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), ReportError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), ReportError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ReportError::Io(e.into()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

fn header(hash: &str) -> Vec<String> {
    vec![format!("config_sha256: {hash}")]
}

/// Load the three tables named in the config and build the panel.
pub fn ingest_stage(config: &RunConfig) -> Result<Ingested, ReportError> {
    let p = &config.input;
    let raw = load_tables(
        &config.resolve(&p.athletes),
        &config.resolve(&p.events),
        &config.resolve(&p.results),
    )
    .map_err(|e| ReportError::stage("ingest", e))?;
    Ok(build_panel(&raw, &config.periods))
}

/// Infer groups, then apply the panel-level size filter and position cap.
pub fn cluster_stage(
    mut panel: Vec<PanelRow>,
    cfg: &ClusterConfig,
) -> Result<(Vec<PanelRow>, GroupFilterAudit), ReportError> {
    cluster_panel(&mut panel, cfg.threshold, cfg.linkage)
        .map_err(|e| ReportError::stage("cluster", e))?;
    Ok(group_filters(panel, cfg.predicate()?, cfg.position_cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentAudit {
    pub rows: usize,
    pub loo_defined: usize,
    pub projected_defined: usize,
}

pub fn instrument_stage(panel: &mut [PanelRow], cfg: &InstrumentConfig) -> InstrumentAudit {
    attach_loo(panel, cfg.scale);
    if cfg.projected {
        attach_projected(panel);
    }
    InstrumentAudit {
        rows: panel.len(),
        loo_defined: panel.iter().filter(|r| r.loo.is_some()).count(),
        projected_defined: panel.iter().filter(|r| r.projected.is_some()).count(),
    }
}

/// Every named specification, in config order.
pub fn estimate_stage(
    panel: &[PanelRow],
    config: &RunConfig,
    hash: &str,
) -> Result<Vec<ResultRecord>, ReportError> {
    config
        .specs
        .par_iter()
        .map(|s| {
            let fail = |message: String| ReportError::Stage {
                stage: "estimate",
                spec: Some(s.name.clone()),
                message,
            };
            let formula = config.spec_formula(s)?;
            let design =
                build_design(panel, &formula, &config.design).map_err(|e| fail(e.to_string()))?;
            let est = estimate(&design, &config.estimation).map_err(|e| fail(e.to_string()))?;
            Ok(ResultRecord {
                name: s.name.clone(),
                formula: formula.to_string(),
                config_sha256: hash.to_string(),
                estimate: est,
            })
        })
        .collect()
}

/// Render a table with the config hash as a leading comment.
pub fn render_table(
    records: &[ResultRecord],
    layout: &TableLayout,
    format: TableFormat,
    hash: &str,
) -> Result<Vec<u8>, ReportError> {
    let mut buf = match format {
        TableFormat::Csv => format!("# config_sha256: {hash}\n"),
        TableFormat::Markdown => format!("<!-- config_sha256: {hash} -->\n\n"),
    }
    .into_bytes();
    emit_table(&mut buf, records, layout, format)?;
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecAudit {
    pub spec: String,
    pub rows: RowAudit,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub config_sha256: String,
    pub ingest: IngestAudit,
    pub group_filter: GroupFilterAudit,
    pub instruments: InstrumentAudit,
    pub specs: Vec<SpecAudit>,
    pub band_infeasible: Vec<(String, String)>,
    pub simulation_failures: Vec<(String, usize)>,
}

#[derive(Serialize)]
struct BandFile<'a> {
    config_sha256: &'a str,
    alpha: f64,
    comparisons: &'a [BandComparison],
}

#[derive(Serialize)]
struct SimFile<'a> {
    config_sha256: &'a str,
    name: &'a str,
    spec: &'a McSpec,
    summary: &'a McSummary,
    replications: &'a [RepResult],
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: &'a str,
    version: &'a str,
    inputs: BTreeMap<&'a str, String>,
    outputs: &'a BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub config_sha256: String,
    pub records: Vec<ResultRecord>,
    pub files: BTreeMap<String, String>,
    pub audit: RunAudit,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, ReportError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Execute every configured stage and write the output tree.
///
/// Stages run in order: ingest, cluster, instruments, estimations,
/// bandwagon, simulations, tables. Output contains no timestamps, so the
/// same config and inputs give a byte-identical tree.
pub fn run(config: &RunConfig) -> Result<RunOutcome, ReportError> {
    config.validate()?;
    let hash = config.hash();
    let out_dir = config.out_dir();
    let mut out = OutputTree::new(&out_dir)?;
    let comment = header(&hash);

    let ingested = ingest_stage(config)?;
    out.write("rejects.csv", &{
        let mut buf = format!("# config_sha256: {hash}\n").into_bytes();
        write_rejects(&mut buf, &ingested.rejects).map_err(ReportError::from_csv)?;
        buf
    })?;
    let (mut panel, group_audit) = cluster_stage(ingested.panel, &config.cluster)?;
    let inst_audit = instrument_stage(&mut panel, &config.instruments);

    out.write("panel.csv", &{
        let mut buf = Vec::new();
        write_panel(&mut buf, &panel, &comment).map_err(|e| ReportError::stage("ingest", e))?;
        buf
    })?;
    out.write(
        "summary_stats.csv",
        &csv_bytes(|b| write_summary(b, &summary_stats(&panel), &comment))?,
    )?;
    out.write(
        "balance.csv",
        &csv_bytes(|b| write_balance(b, &balance(&panel), &comment))?,
    )?;

    let records = estimate_stage(&panel, config, &hash)?;
    let mut spec_audits = Vec::new();
    for r in &records {
        out.write_json(&format!("results/{}.json", r.name), r)?;
        spec_audits.push(SpecAudit {
            spec: r.name.clone(),
            rows: r.estimate.main().audit.clone(),
            warnings: r
                .estimate
                .iv()
                .map(|iv| iv.warnings.clone())
                .unwrap_or_default(),
        });
    }

    let mut band_infeasible = Vec::new();
    if let Some(b) = &config.bandwagon {
        let formula = config.bandwagon_formula(b)?;
        let comps = run_band_comparisons(
            &panel,
            &b.ladder,
            &formula,
            &config.design,
            &config.estimation,
        );
        for c in &comps {
            if let Some(why) = &c.infeasible_reason {
                band_infeasible.push((c.label(), why.clone()));
            }
        }
        let fig = emit_figure_data(&comps, b.alpha, b.significant_only);
        out.write(
            "bandwagon/comparisons.csv",
            &csv_bytes(|buf| write_comparisons(buf, &comps, &comment))?,
        )?;
        out.write(
            "bandwagon/figure.csv",
            &csv_bytes(|buf| write_figure(buf, &fig, &comment))?,
        )?;
        out.write_json(
            "bandwagon/comparisons.json",
            &BandFile {
                config_sha256: &hash,
                alpha: b.alpha,
                comparisons: &comps,
            },
        )?;
    }

    let mut simulation_failures = Vec::new();
    for (i, s) in config.simulations.iter().enumerate() {
        let spec = config.mc_spec(i, s)?;
        let (reps, summary) = run_monte_carlo(&spec).map_err(|e| ReportError::Stage {
            stage: "simulate",
            spec: Some(s.name.clone()),
            message: e.to_string(),
        })?;
        simulation_failures.push((s.name.clone(), summary.failures.len()));
        out.write_json(
            &format!("simulate/{}.json", s.name),
            &SimFile {
                config_sha256: &hash,
                name: &s.name,
                spec: &spec,
                summary: &summary,
                replications: &reps,
            },
        )?;
    }

    for t in &config.tables {
        for format in [TableFormat::Csv, TableFormat::Markdown] {
            let bytes = render_table(&records, t, format, &hash)?;
            out.write(&format!("tables/{}.{}", t.name, format.extension()), &bytes)?;
        }
    }

    let audit = RunAudit {
        config_sha256: hash.clone(),
        ingest: ingested.audit,
        group_filter: group_audit,
        instruments: inst_audit,
        specs: spec_audits,
        band_infeasible,
        simulation_failures,
    };
    out.write_json("audit.json", &audit)?;

    let mut inputs = BTreeMap::new();
    for (k, p) in [
        ("athletes", &config.input.athletes),
        ("events", &config.input.events),
        ("results", &config.input.results),
    ] {
        inputs.insert(k, sha256_hex(&std::fs::read(config.resolve(p))?));
    }
    let files = out.files().clone();
    let manifest = Manifest {
        config_sha256: &hash,
        version: env!("CARGO_PKG_VERSION"),
        inputs,
        outputs: &files,
    };
    out.write_json("manifest.json", &manifest)?;

    Ok(RunOutcome {
        out_dir,
        config_sha256: hash,
        records,
        files,
        audit,
    })
}

/// Read the stored result records of every configured specification.
pub fn load_results(config: &RunConfig, out_dir: &Path) -> Result<Vec<ResultRecord>, ReportError> {
    config
        .specs
        .iter()
        .map(|s| {
            let path = out_dir.join("results").join(format!("{}.json", s.name));
            let text = std::fs::read_to_string(&path).map_err(|e| ReportError::Stage {
                stage: "report",
                spec: Some(s.name.clone()),
                message: format!("{}: {e}", path.display()),
            })?;
            serde_json::from_str(&text).map_err(|e| ReportError::Stage {
                stage: "report",
                spec: Some(s.name.clone()),
                message: e.to_string(),
            })
        })
        .collect()
}
