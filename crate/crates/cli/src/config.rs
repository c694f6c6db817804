//! Run configuration: a TOML file layered over the desk defaults, then
//! command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pepr_core::data::SyntheticSpec;
use pepr_core::scoring::{Method, DEFAULT_ENSEMBLE_SIZE, DEFAULT_PSI};
use pepr_core::TrainConfig;
use serde::{Deserialize, Serialize};

/// Width factor of the desk benchmark networks.
pub const DESK_WIDTH_FACTOR: f64 = 0.25;
/// Group count of the desk benchmark (100 classes in groups of 10).
pub const DESK_GROUPS: usize = 10;
pub const DEFAULT_AUGMENTATIONS: usize = 2;

/// Invalid configuration value; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodFile {
    pub name: String,
    pub path: PathBuf,
}

/// Feature files; `.csv` files are CSV, anything else binary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSources {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test_in: PathBuf,
    pub ood: Vec<OodFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<FileSources>,
    /// Jittered variants cached per training example.
    pub augmentations: usize,
    /// Jitter σ; unset means 5% of the within-cluster σ (synthetic) or of
    /// the mean per-feature σ of the training file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment_sigma: Option<f64>,
    /// Seed of the augmentation jitter.
    pub augment_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringSection {
    pub methods: Vec<String>,
    /// Member count for methods written with the `-ensemble` suffix.
    pub ensemble_size: usize,
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub histogram_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    /// `seed` is replaced per run by each entry of `run.seeds`.
    pub train: TrainConfig,
    pub scoring: ScoringSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut train = TrainConfig::desk();
        train.width_factor = DESK_WIDTH_FACTOR;
        train.groups = Some(DESK_GROUPS);
        Self {
            run: RunSection {
                seeds: (0..10).collect(),
                out: PathBuf::from("pepr-out"),
            },
            data: DataSection {
                source: DataSource::Synthetic,
                synthetic: SyntheticSpec::default(),
                files: None,
                augmentations: DEFAULT_AUGMENTATIONS,
                augment_sigma: None,
                augment_seed: 0,
            },
            train,
            scoring: ScoringSection {
                methods: [
                    "MSP",
                    "MLGT",
                    "KLM",
                    "MOS",
                    "EPOW",
                    "PEPR",
                    "CPEPR",
                    "PEPR-ensemble",
                    "CPEPR-ensemble",
                ]
                .map(String::from)
                .to_vec(),
                ensemble_size: DEFAULT_ENSEMBLE_SIZE,
                psi: DEFAULT_PSI,
            },
            report: ReportSection {
                histogram_bins: pepr_core::metrics::HISTOGRAM_BINS,
            },
        }
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Parses TOML; keys not given keep their desk defaults.
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let overlay: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table)?;
        let mut base = toml::Value::try_from(RunConfig::default()).context("serializing defaults")?;
        merge(&mut base, overlay);
        let cfg: RunConfig = base.try_into()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).with_context(|| format!("in config file {}", path.display()))?;
        cfg.resolve_relative_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes data file paths relative to the config file's directory.
    fn resolve_relative_paths(&mut self, base: &Path) {
        if let Some(files) = &mut self.data.files {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut files.train);
            fix(&mut files.val);
            fix(&mut files.test_in);
            for o in &mut files.ood {
                fix(&mut o.path);
            }
        }
    }

    pub fn to_toml_string(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parsed, de-duplicated methods in configured order.
    pub fn methods(&self) -> anyhow::Result<Vec<Method>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.scoring.methods {
            let m = Method::parse_with(s, self.scoring.ensemble_size)?;
            if seen.insert(m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(config_err("no scoring methods configured"));
        }
        Ok(out)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let seeds: BTreeSet<u64> = self.run.seeds.iter().copied().collect();
        if self.run.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        if seeds.len() != self.run.seeds.len() {
            return Err(config_err("seeds must be distinct"));
        }
        self.train.validate()?;
        self.methods()?;
        if !(self.scoring.psi >= 0.0) {
            return Err(config_err("psi must be ≥ 0"));
        }
        if self.data.augmentations == 0 {
            return Err(config_err("augmentations must be ≥ 1"));
        }
        if matches!(self.data.augment_sigma, Some(s) if !(s >= 0.0)) {
            return Err(config_err("augment_sigma must be ≥ 0"));
        }
        if self.report.histogram_bins == 0 {
            return Err(config_err("histogram_bins must be ≥ 1"));
        }
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.validate()?,
            DataSource::Files => {
                let files = self
                    .data
                    .files
                    .as_ref()
                    .ok_or_else(|| config_err("data.source = \"files\" needs a [data.files] section"))?;
                if files.ood.is_empty() {
                    return Err(config_err("data.files.ood needs at least one OOD file"));
                }
                let names: BTreeSet<&str> = files.ood.iter().map(|o| o.name.as_str()).collect();
                if names.len() != files.ood.len() || names.contains(pepr_core::data::IN_DISTRIBUTION_NAME) {
                    return Err(config_err(
                        "OOD dataset names must be distinct and not 'in-distribution'",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of the file configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub methods: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub ensemble_size: Option<usize>,
    pub scale_factor: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.seeds {
            cfg.run.seeds = s.clone();
        }
        if let Some(m) = &self.methods {
            cfg.scoring.methods = m.clone();
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if let Some(e) = self.ensemble_size {
            cfg.scoring.ensemble_size = e;
        }
        if let Some(w) = self.scale_factor {
            cfg.train.width_factor = w;
        }
    }
}

/// `"3"`, `"0,2,5"` or the half-open range `"0..10"`.
pub fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| config_err(format!("bad seed range '{text}'")))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| config_err(format!("bad seed range '{text}'")))?;
        if b <= a {
            bail!(ConfigError(format!("empty seed range '{text}'")));
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| config_err(format!("bad seed '{s}'"))))
        .collect()
}

/// Comma-separated method list.
pub fn parse_method_list(text: &str) -> Vec<String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}
