//! JSON run configuration shared by all subcommands.

use std::path::{Path, PathBuf};

use afm_core::{DgpSpec, EstimatorConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::mc::McConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the seeds inside the subcommand sections.
    pub seed: Option<u64>,
    /// Size of the worker pool. Results do not depend on it.
    pub workers: Option<usize>,
    /// Output directory, `.` when absent.
    pub out: Option<PathBuf>,
    pub simulate: Option<DgpSpec>,
    pub fit: Option<FitSection>,
    pub eval: Option<EvalSection>,
    pub mc: Option<McConfig>,
    pub transform: Option<TransformSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub panel: PathBuf,
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

/// Estimated loadings come either as spline coefficients or as function descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub factors_est: PathBuf,
    #[serde(default)]
    pub coeffs: Option<PathBuf>,
    #[serde(default)]
    pub functions_est: Option<PathBuf>,
    pub factors_true: PathBuf,
    pub functions_true: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    pub factors: PathBuf,
    /// `gaussian` or `ecdf:<reference.csv>`.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Gaussian,
    Ecdf(PathBuf),
}

impl TransformSection {
    pub fn parse_target(&self) -> Result<Target> {
        match self.target.as_str() {
            "gaussian" => Ok(Target::Gaussian),
            s => match s.strip_prefix("ecdf:") {
                Some(p) if !p.is_empty() => Ok(Target::Ecdf(PathBuf::from(p))),
                _ => Err(CliError::Config(format!(
                    "transform target must be `gaussian` or `ecdf:<file>`, got `{s}`"
                ))),
            },
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase_paths(base);
        Ok(cfg)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        if let Some(out) = &mut self.out {
            rebase(base, out);
        }
        if let Some(fit) = &mut self.fit {
            rebase(base, &mut fit.panel);
        }
        if let Some(ev) = &mut self.eval {
            rebase(base, &mut ev.factors_est);
            rebase(base, &mut ev.factors_true);
            rebase(base, &mut ev.functions_true);
            if let Some(p) = &mut ev.coeffs {
                rebase(base, p);
            }
            if let Some(p) = &mut ev.functions_est {
                rebase(base, p);
            }
        }
        if let Some(tr) = &mut self.transform {
            rebase(base, &mut tr.factors);
            if let Some(reference) = tr.target.strip_prefix("ecdf:") {
                let mut p = PathBuf::from(reference);
                if !reference.is_empty() {
                    rebase(base, &mut p);
                    tr.target = format!("ecdf:{}", p.display());
                }
            }
        }
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if workers.is_some() {
            self.workers = workers;
        }
        if out.is_some() {
            self.out = out;
        }
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}
