//! Versioned TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::generate::TASKS;
use crate::inference::train::TrainConfig;
use crate::inference::Algorithm;
use crate::kernels::KernelSpec;
use crate::likelihoods::Likelihood;

pub const SCHEMA_VERSION: u32 = 1;

fn ten() -> usize {
    10
}

fn default_jitter() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InducingConfig {
    /// Number of temporal inducing inputs, spread evenly over the training range.
    pub m: usize,
    #[serde(default)]
    pub placement: Placement,
}

/// Where temporal inducing inputs go. `Data` puts one at every distinct
/// training input and ignores `m`; with a Gaussian likelihood this makes the
/// objectives equal the exact log marginal likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Even,
    Data,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSpec {
    pub kernel: KernelSpec,
    /// Evenly spaced locations over the training range (one spatial coordinate only).
    #[serde(default)]
    pub m: Option<usize>,
    /// CSV of locations, one per row, with a header.
    #[serde(default)]
    pub locations: Option<PathBuf>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub m: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    pub likelihood: Likelihood,
    pub inducing: InducingConfig,
    #[serde(default)]
    pub spatial: Option<SpatialSpec>,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default = "ten")]
    pub folds: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Algorithms for `compare`; defaults to cvi, pep@1, pep@0.01, pl, eks.
    #[serde(default)]
    pub compare: Option<Vec<Algorithm>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, resolve relative paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.spatial.as_mut().and_then(|s| s.locations.as_mut()) {
            resolve(p);
        }
        if let Some(p) = cfg.output.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.kernel.validate()?;
        self.likelihood.validate()?;
        self.algorithm.validate()?;
        self.train.validate()?;
        if self.kernel.output_dim() != self.likelihood.latent_dim() {
            return Err(Error::Config(format!(
                "kernel has {} outputs but the {} likelihood needs {}",
                self.kernel.output_dim(),
                self.likelihood.name(),
                self.likelihood.latent_dim()
            )));
        }
        if self.inducing.m < 2 {
            return Err(Error::Config("inducing.m must be at least 2".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        match (&self.data.path, &self.data.generator) {
            (Some(p), None) => {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "data file {} does not exist",
                        p.display()
                    )));
                }
            }
            (None, Some(g)) => {
                if !TASKS.contains(&g.as_str()) {
                    return Err(Error::UnknownTask(g.clone()));
                }
                if self.data.seed.is_none() || self.data.n.is_none() {
                    return Err(Error::Config(
                        "generated data needs both `n` and `seed`".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::Config(
                    "data needs exactly one of `path` or `generator`".into(),
                ))
            }
        }
        if let Some(s) = &self.spatial {
            s.kernel.validate()?;
            match (&s.m, &s.locations) {
                (Some(m), None) if *m >= 1 => {}
                (None, Some(p)) if p.is_file() => {}
                (None, Some(p)) => {
                    return Err(Error::Config(format!(
                        "spatial locations file {} does not exist",
                        p.display()
                    )))
                }
                _ => {
                    return Err(Error::Config(
                        "spatial needs exactly one of `m` (>= 1) or `locations`".into(),
                    ))
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.m.iter().any(|&m| m < 2) {
                return Err(Error::Config("sweep.m entries must be at least 2".into()));
            }
        }
        for a in self.compare.iter().flatten() {
            a.validate()?;
        }
        Ok(())
    }

    pub fn compare_algorithms(&self) -> Vec<Algorithm> {
        self.compare.clone().unwrap_or_else(|| {
            vec![
                Algorithm::Cvi { rho: 1.0 },
                Algorithm::Pep {
                    alpha: 1.0,
                    parallel: true,
                    damping: None,
                },
                Algorithm::Pep {
                    alpha: 0.01,
                    parallel: true,
                    damping: None,
                },
                Algorithm::Pl { damping: 1.0 },
                Algorithm::Eks { damping: 1.0 },
            ]
        })
    }

    pub fn sweep_values(&self) -> Vec<usize> {
        self.sweep
            .as_ref()
            .map_or_else(|| vec![4, 8, 16, 32], |s| s.m.clone())
    }
}
