//! Run configuration (TOML) and its validation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::table::TableLayout;
use super::ReportError;
use crate::bandwagon::default_formula;
use crate::estimators::EstimationOptions;
use crate::grouping::{Linkage, SizePredicate};
use crate::hdfe::{validate_formula, CovarianceSpec, DesignOptions, FormulaSpec, OutcomeSpec};
use crate::ingest::PeriodBoundaries;
use crate::instruments::{default_ladder, AbilityScale, BandPair};
use crate::theory::montecarlo::McSpec;
use crate::theory::DgpConfig;

/// Environment variables that override the input paths.
pub const ENV_ATHLETES: &str = "DRAFTIV_ATHLETES";
pub const ENV_EVENTS: &str = "DRAFTIV_EVENTS";
pub const ENV_RESULTS: &str = "DRAFTIV_RESULTS";
pub const ENV_OUT: &str = "DRAFTIV_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub athletes: PathBuf,
    pub events: PathBuf,
    pub results: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Seconds; gaps up to and including this merge.
    pub threshold: f64,
    pub linkage: Linkage,
    /// Panel-level group-size filter such as `>=2` or `<10`.
    pub group_size: String,
    pub position_cap: Option<u32>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            threshold: 5.0,
            linkage: Linkage::Single,
            group_size: "any".into(),
            position_cap: None,
        }
    }
}

impl ClusterConfig {
    pub fn predicate(&self) -> Result<SizePredicate, ReportError> {
        self.group_size
            .parse()
            .map_err(|e: String| ReportError::Config(format!("cluster.group_size: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstrumentConfig {
    pub scale: AbilityScale,
    pub projected: bool,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        InstrumentConfig {
            scale: AbilityScale::Seconds,
            projected: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub name: String,
    pub formula: String,
    /// Replaces the formula's covariance section.
    #[serde(default)]
    pub se: Option<CovarianceSpec>,
}

fn default_alpha() -> f64 {
    0.05
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwagonConfig {
    #[serde(default = "default_ladder")]
    pub ladder: Vec<BandPair>,
    #[serde(default)]
    pub formula: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "yes")]
    pub significant_only: bool,
}

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub name: String,
    pub replications: usize,
    /// Defaults to a seed derived from the run seed and this entry's index.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub formula: Option<String>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub dgp: DgpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file. Not part of the hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub input: InputPaths,
    #[serde(default)]
    pub periods: PeriodBoundaries,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub instruments: InstrumentConfig,
    #[serde(default)]
    pub outcome: OutcomeSpec,
    #[serde(default)]
    pub design: DesignOptions,
    #[serde(default)]
    pub estimation: EstimationOptions,
    #[serde(default, rename = "spec")]
    pub specs: Vec<SpecConfig>,
    #[serde(default)]
    pub bandwagon: Option<BandwagonConfig>,
    #[serde(default, rename = "simulate")]
    pub simulations: Vec<SimulateConfig>,
    #[serde(default, rename = "table")]
    pub tables: Vec<TableLayout>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn unique<'a>(kind: &str, names: impl Iterator<Item = &'a str>) -> Result<(), ReportError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !valid_name(n) {
            return Err(ReportError::Config(format!(
                "{kind} name `{n}` must be non-empty [A-Za-z0-9_-]"
            )));
        }
        if !seen.insert(n) {
            return Err(ReportError::Config(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ReportError> {
        let mut c: RunConfig =
            toml::from_str(text).map_err(|e| ReportError::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    /// Read and validate a config file, applying path overrides from the
    /// environment.
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut c = Self::from_toml(&text, &base)?;
        c.apply_env();
        c.validate()?;
        Ok(c)
    }

    pub fn apply_env(&mut self) {
        let var = |k: &str| {
            std::env::var_os(k)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        };
        if let Some(p) = var(ENV_ATHLETES) {
            self.input.athletes = p;
        }
        if let Some(p) = var(ENV_EVENTS) {
            self.input.events = p;
        }
        if let Some(p) = var(ENV_RESULTS) {
            self.input.results = p;
        }
        if let Some(p) = var(ENV_OUT) {
            self.out = Some(p);
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.out.as_deref().unwrap_or(Path::new("out")))
    }

    /// Parsed formula of a named specification with the run's outcome and
    /// any covariance override applied.
    pub fn spec_formula(&self, spec: &SpecConfig) -> Result<FormulaSpec, ReportError> {
        let mut f = FormulaSpec::parse(&spec.formula).map_err(|e| ReportError::Spec {
            spec: spec.name.clone(),
            message: e.to_string(),
        })?;
        f.outcome = self.outcome;
        if let Some(se) = &spec.se {
            f.se = se.clone();
        }
        Ok(f)
    }

    pub fn bandwagon_formula(&self, b: &BandwagonConfig) -> Result<FormulaSpec, ReportError> {
        let mut f = match &b.formula {
            Some(text) => FormulaSpec::parse(text)
                .map_err(|e| ReportError::Config(format!("bandwagon.formula: {e}")))?,
            None => default_formula(),
        };
        f.outcome = self.outcome;
        Ok(f)
    }

    pub fn mc_spec(&self, index: usize, s: &SimulateConfig) -> Result<McSpec, ReportError> {
        let seed = s.seed.unwrap_or_else(|| {
            crate::theory::montecarlo::replication_seed(self.seed, index as u64)
        });
        let mut spec = McSpec::standard(s.dgp.clone(), s.replications, seed);
        if let Some(text) = &s.formula {
            spec.formula = FormulaSpec::parse(text)
                .map_err(|e| ReportError::Config(format!("simulate `{}` formula: {e}", s.name)))?;
        }
        spec.level = s.level;
        spec.estimation = self.estimation;
        spec.design = self.design;
        Ok(spec)
    }

    /// Check everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), ReportError> {
        PeriodBoundaries::new(self.periods.covid_start, self.periods.post_start)
            .map_err(ReportError::Config)?;
        if !(self.cluster.threshold >= 0.0 && self.cluster.threshold.is_finite()) {
            return Err(ReportError::Config(format!(
                "cluster.threshold must be finite and >= 0, got {}",
                self.cluster.threshold
            )));
        }
        self.cluster.predicate()?;
        if self.cluster.position_cap == Some(0) {
            return Err(ReportError::Config(
                "cluster.position_cap must be >= 1".into(),
            ));
        }
        self.outcome
            .validate()
            .map_err(|e| ReportError::Config(e.to_string()))?;
        unique("spec", self.specs.iter().map(|s| s.name.as_str()))?;
        unique("simulate", self.simulations.iter().map(|s| s.name.as_str()))?;
        unique("table", self.tables.iter().map(|s| s.name.as_str()))?;
        for s in &self.specs {
            let f = self.spec_formula(s)?;
            validate_formula(&f).map_err(|e| ReportError::Spec {
                spec: s.name.clone(),
                message: e.to_string(),
            })?;
        }
        if let Some(b) = &self.bandwagon {
            let f = self.bandwagon_formula(b)?;
            if f.endogenous.as_deref() != Some("treat") {
                return Err(ReportError::Config(
                    "bandwagon.formula must instrument `treat`".into(),
                ));
            }
            let mut probe = f.clone();
            probe.filters.bands = b.ladder.first().copied();
            if b.ladder.is_empty() {
                return Err(ReportError::Config("bandwagon.ladder is empty".into()));
            }
            validate_formula(&probe)
                .map_err(|e| ReportError::Config(format!("bandwagon.formula: {e}")))?;
            if b.alpha.is_nan() || b.alpha <= 0.0 {
                return Err(ReportError::Config(format!(
                    "bandwagon.alpha must be positive, got {}",
                    b.alpha
                )));
            }
        }
        for (i, s) in self.simulations.iter().enumerate() {
            let spec = self.mc_spec(i, s)?;
            spec.dgp
                .validate()
                .map_err(|e| ReportError::Config(format!("simulate `{}`: {e}", s.name)))?;
            if !spec.formula.is_iv() || s.replications == 0 {
                return Err(ReportError::Config(format!(
                    "simulate `{}` needs an iv formula and at least one replication",
                    s.name
                )));
            }
            validate_formula(&spec.formula)
                .map_err(|e| ReportError::Config(format!("simulate `{}`: {e}", s.name)))?;
        }
        let names: BTreeSet<&str> = self.specs.iter().map(|s| s.name.as_str()).collect();
        for t in &self.tables {
            if let Some(bad) = t.specs.iter().find(|s| !names.contains(s.as_str())) {
                return Err(ReportError::UnknownSpec {
                    table: t.name.clone(),
                    spec: bad.clone(),
                });
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config (output
    /// directory excluded).
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[input]
athletes = "a.csv"
events = "e.csv"
results = "r.csv"
"#;

    fn cfg(extra: &str) -> Result<RunConfig, ReportError> {
        let c = RunConfig::from_toml(&format!("{MINIMAL}{extra}"), Path::new("/base"))?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_defaults() {
        let c = cfg("").unwrap();
        assert_eq!(c.cluster.threshold, 5.0);
        assert!(c.specs.is_empty() && c.bandwagon.is_none());
        assert_eq!(c.out_dir(), PathBuf::from("/base/out"));
        assert_eq!(c.resolve(&c.input.athletes), PathBuf::from("/base/a.csv"));
    }

    #[test]
    fn unknown_column_is_named() {
        let err =
            cfg("[[spec]]\nname = \"s\"\nformula = \"y ~ position + wingspan\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wingspan") && msg.contains("`s`"), "{msg}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let spec = "[[spec]]\nname = \"s\"\nformula = \"y ~ position\"\n";
        assert!(cfg(&format!("{spec}{spec}"))
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn table_must_reference_known_spec() {
        let err = cfg("[[spec]]\nname = \"s\"\nformula = \"y ~ position\"\n[[table]]\nname = \"t\"\nspecs = [\"s\", \"q\"]\n")
            .unwrap_err();
        assert!(err.to_string().contains("`q`"));
    }

    #[test]
    fn hash_ignores_out_but_not_content() {
        let a = cfg("").unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 99;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn se_override_applies() {
        let c = cfg("[[spec]]\nname = \"s\"\nformula = \"y ~ position | se: hc1\"\nse = \"cluster:athlete\"\n").unwrap();
        let f = c.spec_formula(&c.specs[0]).unwrap();
        assert_eq!(f.se.to_string(), "cluster:athlete");
    }
}
