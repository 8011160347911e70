use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::WardVariant;
use crate::distance::Metric;
use crate::error::{Error, Result};
use crate::inference::{DEFAULT_PERMUTATIONS, DEFAULT_SEED};
use crate::ingest::{LogVariant, FACTOR_NAMES};

/// Smallest permutation count accepted for a full pipeline run.
pub const MIN_REPORT_PERMUTATIONS: usize = 99;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub demographics: Option<PathBuf>,
    pub resources: Option<PathBuf>,
    pub regroup: Option<PathBuf>,
    /// A previously written abundance CSV; replaces the three files above.
    pub abundance: Option<PathBuf>,
}

/// Whether Bray–Curtis sees raw counts or the log-transformed table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrayInput {
    Raw,
    #[default]
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    #[serde(default = "yes")]
    pub clustering: bool,
    #[serde(default = "yes")]
    pub figures: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            clustering: true,
            figures: true,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Euclidean, Metric::BrayCurtis]
}

fn default_terms() -> Vec<String> {
    FACTOR_NAMES.iter().map(|s| s.to_string()).collect()
}

fn default_group() -> String {
    "ethnicity".into()
}

fn default_k() -> usize {
    2
}

fn default_axes() -> Vec<usize> {
    vec![1, 2]
}

fn default_n_perm() -> usize {
    DEFAULT_PERMUTATIONS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("fuelseg-out")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Inputs,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// PERMANOVA terms in the order they enter the model.
    #[serde(default = "default_terms")]
    pub terms: Vec<String>,
    /// Factor used for dispersion, pairwise tests, diversity and rank tests.
    #[serde(default = "default_group")]
    pub group: String,
    #[serde(default = "default_n_perm")]
    pub n_perm: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub log_variant: LogVariant,
    #[serde(default)]
    pub bray_input: BrayInput,
    #[serde(default)]
    pub ward_variant: WardVariant,
    /// Number of principal coordinates written out; 0 skips ordination.
    #[serde(default = "default_k")]
    pub k: usize,
    /// 1-based axes used for fitted vectors.
    #[serde(default = "default_axes")]
    pub envfit_axes: Vec<usize>,
    #[serde(default)]
    pub enable: Toggles,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.inputs.demographics);
        fix(&mut self.inputs.resources);
        fix(&mut self.inputs.regroup);
        fix(&mut self.inputs.abundance);
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.inputs;
        let raw = [&i.demographics, &i.resources, &i.regroup];
        match (&i.abundance, raw.iter().all(|p| p.is_some()), raw.iter().any(|p| p.is_some())) {
            (Some(_), _, false) | (None, true, _) => {}
            (Some(_), _, true) => {
                return Err(Error::Config(
                    "give either inputs.abundance or the demographics/resources/regroup triple, not both".into(),
                ))
            }
            (None, false, _) => {
                return Err(Error::Config(
                    "inputs need demographics, resources and regroup paths (or an abundance table)".into(),
                ))
            }
        }
        for p in raw.into_iter().flatten().chain(&i.abundance) {
            if !p.is_file() {
                return Err(Error::Config(format!("input `{}` does not exist", p.display())));
            }
        }
        if self.n_perm < MIN_REPORT_PERMUTATIONS {
            return Err(Error::Config(format!(
                "n_perm must be at least {MIN_REPORT_PERMUTATIONS} for a report, got {}",
                self.n_perm
            )));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::Config("at least one PERMANOVA term is required".into()));
        }
        for t in self.terms.iter().chain(std::iter::once(&self.group)) {
            if !FACTOR_NAMES.contains(&t.as_str()) {
                return Err(Error::Config(format!(
                    "unknown factor `{t}`; expected one of {FACTOR_NAMES:?}"
                )));
            }
        }
        let mut seen = self.terms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.terms.len() {
            return Err(Error::Config("PERMANOVA terms must be distinct".into()));
        }
        if self.k > 0 && (self.envfit_axes.is_empty() || self.envfit_axes.iter().any(|&a| a == 0 || a > self.k)) {
            return Err(Error::Config(format!(
                "envfit_axes {:?} must be 1-based and at most k = {}",
                self.envfit_axes, self.k
            )));
        }
        Ok(())
    }
}
