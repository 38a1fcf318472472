//! Command-line front end. `run` drives a whole config; the other
//! subcommands expose one stage each over panel files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use draftiv::bandwagon::{
    default_formula, emit_figure_data, run_band_comparisons, write_comparisons, write_figure,
};
use draftiv::estimators::{estimate, EstimationOptions};
use draftiv::grouping::Linkage;
use draftiv::hdfe::{
    build_design, CovarianceSpec, DesignOptions, FormulaSpec, OutcomeMode, OutcomeSpec,
};
use draftiv::ingest::{build_panel, load_tables, write_rejects, PeriodBoundaries};
use draftiv::instruments::{default_ladder, parse_ladder, AbilityScale};
use draftiv::panel::{read_panel_file, write_panel, write_panel_file};
use draftiv::report::config::{ENV_ATHLETES, ENV_EVENTS, ENV_OUT, ENV_RESULTS};
use draftiv::report::run::{cluster_stage, instrument_stage, load_results, render_table};
use draftiv::report::{run, ClusterConfig, InstrumentConfig, RunConfig, TableFormat};
use draftiv::theory::montecarlo::{run_monte_carlo, McSpec};
use draftiv::theory::DgpConfig;

#[derive(Parser)]
#[command(name = "draftiv", version, about = "Drafting-position IV pipeline")]
struct Cli {
    /// Master seed (run: overrides the config seed; simulate: Monte Carlo seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: a directory for ingest/run/report, a file elsewhere.
    #[arg(long, global = true, env = ENV_OUT)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Merge the input tables into a panel; writes panel.csv and rejects.csv.
    Ingest(IngestArgs),
    /// Infer drafting groups and positions in a panel file.
    Cluster(ClusterArgs),
    /// Attach the leave-one-out and projected instruments to a panel file.
    Instrument(InstrumentArgs),
    /// Fit one formula on a panel file; prints the result as JSON.
    Estimate(EstimateArgs),
    /// Pooled band comparisons on a panel file.
    Bandwagon(BandwagonArgs),
    /// Monte Carlo on the simulated panel.
    Simulate(SimulateArgs),
    /// Re-render the tables of a finished run from its stored results.
    Report(ConfigArg),
    /// Every configured stage.
    Run(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, env = ENV_ATHLETES)]
    athletes: PathBuf,
    #[arg(long, env = ENV_EVENTS)]
    events: PathBuf,
    #[arg(long, env = ENV_RESULTS)]
    results: PathBuf,
    #[arg(long, default_value = "2020-01-01")]
    covid_start: chrono::NaiveDate,
    #[arg(long, default_value = "2023-01-01")]
    post_start: chrono::NaiveDate,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    threshold: f64,
    #[arg(long, default_value = "single")]
    linkage: Linkage,
    /// Keep groups whose size matches, e.g. `>=2` or `<10`.
    #[arg(long, default_value = "any")]
    group_size: String,
    #[arg(long)]
    position_cap: Option<u32>,
}

#[derive(Args)]
struct InstrumentArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Use within-event z-scores of swim time instead of seconds.
    #[arg(long)]
    zscore: bool,
    #[arg(long)]
    no_projected: bool,
}

#[derive(Args)]
struct OutcomeArgs {
    /// `log` for ln(rank+1), `centered` for ln(rank - event mean + c).
    #[arg(long, default_value = "log")]
    outcome: String,
    #[arg(long, default_value_t = 1.0)]
    shift_c: f64,
    #[arg(long)]
    rank_cap: Option<f64>,
}

impl OutcomeArgs {
    fn spec(&self) -> Result<OutcomeSpec> {
        let mode = match self.outcome.as_str() {
            "log" => OutcomeMode::LogRankPlus1,
            "centered" => OutcomeMode::CenteredLog,
            other => bail!("unknown outcome `{other}` (expected log|centered)"),
        };
        let spec = OutcomeSpec {
            mode,
            shift_c: self.shift_c,
            rank_cap: self.rank_cap,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Formula text, or a path to a file holding it.
    #[arg(long)]
    formula: String,
    /// Covariance override: iid, hc1, cluster:F or twoway:F,G.
    #[arg(long)]
    se: Option<CovarianceSpec>,
    #[command(flatten)]
    outcome: OutcomeArgs,
}

#[derive(Args)]
struct BandwagonArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Comma-separated ladder, e.g. `1-2:3-4,2-3:4-5`.
    #[arg(long)]
    bands: Option<String>,
    #[arg(long)]
    formula: Option<String>,
    /// Figure rows file.
    #[arg(long)]
    figure: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    outcome: OutcomeArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with data-generating process settings.
    #[arg(long)]
    dgp: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long)]
    formula: Option<String>,
}

fn formula_text(s: &str) -> Result<String> {
    let p = Path::new(s);
    if !s.contains('~') && p.is_file() {
        return std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    }
    Ok(s.to_string())
}

fn parse_formula(s: &str) -> Result<FormulaSpec> {
    let text = formula_text(s)?;
    FormulaSpec::parse(text.trim()).map_err(|e| anyhow::anyhow!("formula: {e}"))
}

/// File at `out`, or stdout.
fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn emit_panel(out: Option<&Path>, rows: &[draftiv::PanelRow]) -> Result<()> {
    match out {
        Some(p) => write_panel_file(p, rows, &[])?,
        None => write_panel(std::io::stdout().lock(), rows, &[])?,
    }
    Ok(())
}

fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig> {
    let mut c = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        // relative to the working directory, not the config
        c.out = Some(std::path::absolute(o)?);
    }
    Ok(c)
}

fn main() -> Result<()> {
    match run_cli() {
        // a closed stdout (`draftiv ... | head`) is not a failure
        Err(e)
            if e.chain().any(|c| {
                let io = c.downcast_ref::<std::io::Error>().or_else(|| {
                    match c.downcast_ref::<csv::Error>().map(|e| e.kind()) {
                        Some(csv::ErrorKind::Io(io)) => Some(io),
                        _ => None,
                    }
                });
                io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            }) =>
        {
            Ok(())
        }
        other => other,
    }
}

fn run_cli() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let out = cli.out.as_deref();
    match &cli.cmd {
        Cmd::Ingest(a) => {
            let bounds =
                PeriodBoundaries::new(a.covid_start, a.post_start).map_err(anyhow::Error::msg)?;
            let raw = load_tables(&a.athletes, &a.events, &a.results)?;
            let ing = build_panel(&raw, &bounds);
            let dir = out.unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir)?;
            write_panel_file(&dir.join("panel.csv"), &ing.panel, &[])?;
            write_rejects(File::create(dir.join("rejects.csv"))?, &ing.rejects)?;
            println!("{}", serde_json::to_string_pretty(&ing.audit)?);
        }
        Cmd::Cluster(a) => {
            let panel = read_panel_file(&a.panel)?;
            let cfg = ClusterConfig {
                threshold: a.threshold,
                linkage: a.linkage,
                group_size: a.group_size.clone(),
                position_cap: a.position_cap,
            };
            let (rows, audit) = cluster_stage(panel, &cfg)?;
            emit_panel(out, &rows)?;
            eprintln!("{}", serde_json::to_string(&audit)?);
        }
        Cmd::Instrument(a) => {
            let mut panel = read_panel_file(&a.panel)?;
            let scale = if a.zscore {
                AbilityScale::EventZScore
            } else {
                AbilityScale::Seconds
            };
            let audit = instrument_stage(
                &mut panel,
                &InstrumentConfig {
                    scale,
                    projected: !a.no_projected,
                },
            );
            emit_panel(out, &panel)?;
            eprintln!("{}", serde_json::to_string(&audit)?);
        }
        Cmd::Estimate(a) => {
            let panel = read_panel_file(&a.panel)?;
            let mut f = parse_formula(&a.formula)?;
            f.outcome = a.outcome.spec()?;
            if let Some(se) = &a.se {
                f.se = se.clone();
            }
            let d = build_design(&panel, &f, &DesignOptions::default())?;
            let est = estimate(&d, &EstimationOptions::default())?;
            let mut w = sink(out)?;
            serde_json::to_writer_pretty(&mut w, &est)?;
            writeln!(w)?;
        }
        Cmd::Bandwagon(a) => {
            let panel = read_panel_file(&a.panel)?;
            let ladder = match &a.bands {
                Some(s) => parse_ladder(s)?,
                None => default_ladder(),
            };
            let mut f = match &a.formula {
                Some(s) => parse_formula(s)?,
                None => default_formula(),
            };
            f.outcome = a.outcome.spec()?;
            let comps = run_band_comparisons(
                &panel,
                &ladder,
                &f,
                &DesignOptions::default(),
                &EstimationOptions::default(),
            );
            write_comparisons(sink(out)?, &comps, &[])?;
            if let Some(p) = &a.figure {
                let rows = emit_figure_data(&comps, a.alpha, !a.all);
                write_figure(sink(Some(p))?, &rows, &[])?;
            }
        }
        Cmd::Simulate(a) => {
            let dgp: DgpConfig = match &a.dgp {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
                None => DgpConfig::default(),
            };
            let mut spec = McSpec::standard(dgp, a.replications, cli.seed.unwrap_or(1));
            if let Some(s) = &a.formula {
                spec.formula = parse_formula(s)?;
            }
            let (reps, summary) = run_monte_carlo(&spec)?;
            let mut w = sink(out)?;
            serde_json::to_writer_pretty(
                &mut w,
                &serde_json::json!({ "spec": spec, "summary": summary, "replications": reps }),
            )?;
            writeln!(w)?;
        }
        Cmd::Report(a) => {
            let c = load_config(&a.config, &cli)?;
            let dir = c.out_dir();
            let records = load_results(&c, &dir)?;
            let hash = c.hash();
            for t in &c.tables {
                for format in [TableFormat::Csv, TableFormat::Markdown] {
                    let path =
                        dir.join("tables")
                            .join(format!("{}.{}", t.name, format.extension()));
                    std::fs::create_dir_all(path.parent().expect("has parent"))?;
                    std::fs::write(&path, render_table(&records, t, format, &hash)?)?;
                }
            }
        }
        Cmd::Run(a) => {
            let c = load_config(&a.config, &cli)?;
            let outcome = run(&c)?;
            println!("config_sha256 {}", outcome.config_sha256);
            println!(
                "wrote {} files to {}",
                outcome.files.len() + 1,
                outcome.out_dir.display()
            );
            for s in &outcome.audit.specs {
                for w in &s.warnings {
                    eprintln!("warning [{}]: {w}", s.spec);
                }
            }
        }
    }
    Ok(())
}
