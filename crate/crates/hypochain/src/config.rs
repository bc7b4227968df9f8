//! Experiment configuration files (TOML).
//!
//! ```toml
//! [model]
//! key = "bs_asian"
//! s0 = 100.0
//! r = 0.0
//! vol = 0.2
//!
//! [run]
//! seed = 7
//! paths = 1000000
//! t_grid = [0.1, 0.05, 0.02, 0.01]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// A scalar `c` (meaning `c I`) or explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixParam {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "key", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Linear chain `B_j = C_j x_{j-1}` with constant `σ`.
    Kolmogorov {
        #[serde(default = "default_levels")]
        n: usize,
        #[serde(default = "default_one")]
        d: usize,
        #[serde(default)]
        sigma: Option<MatrixParam>,
        /// `C_2, ..., C_n`; identities when absent.
        #[serde(default)]
        couplings: Option<Vec<MatrixParam>>,
        #[serde(default)]
        xi: Option<Vec<f64>>,
    },
    BsAsian {
        s0: f64,
        #[serde(default)]
        r: f64,
        vol: f64,
    },
    QuadraticAsian {
        xi1: f64,
    },
    Basket {
        s0: Vec<f64>,
        r: Vec<f64>,
        rho: Vec<Vec<f64>>,
        w: Vec<f64>,
        vol: Vec<f64>,
        #[serde(default = "default_maturity")]
        maturity: f64,
    },
}

fn default_levels() -> usize {
    2
}

fn default_one() -> usize {
    1
}

fn default_maturity() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Euler,
    #[default]
    EulerTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecordName {
    #[default]
    Terminal,
    SupNorm,
    JointN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthConfig {
    Silverman,
    SilvermanSphered,
    NormalReference { order: u32 },
    Fixed { h: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    #[default]
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub scheme: SchemeName,
    pub record: RecordName,
    /// Single-time experiments.
    pub t: f64,
    /// Multi-time experiments; `[t]` when empty.
    pub t_grid: Vec<f64>,
    /// Rescaled evaluation point; the origin when absent.
    pub y_bar: Option<Vec<f64>>,
    pub bandwidth: BandwidthConfig,
    pub derivative_bandwidth: BandwidthConfig,
    pub tail_levels: usize,
    pub moment_p: f64,
    pub probes: usize,
    pub theta_steps: Option<usize>,
    /// Importance-sampling points for the integral check; 0 skips it.
    pub integral_points: usize,
    /// Write per-path samples in `simulate`.
    pub write_samples: bool,
    /// Relative tolerance override for the density and convergence checks.
    pub tolerance: Option<f64>,
    /// Strike for `price`; at the money when absent.
    pub strike: Option<f64>,
    pub kind: KindName,
    pub discount_rate: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: 100_000,
            steps: 64,
            workers: 0,
            scheme: SchemeName::default(),
            record: RecordName::default(),
            t: 1.0,
            t_grid: Vec::new(),
            y_bar: None,
            bandwidth: BandwidthConfig::Silverman,
            derivative_bandwidth: BandwidthConfig::NormalReference { order: 2 },
            tail_levels: 16,
            moment_p: 2.0,
            probes: 100,
            theta_steps: None,
            integral_points: 0,
            write_samples: false,
            tolerance: None,
            strike: None,
            kind: KindName::default(),
            discount_rate: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn times(&self) -> Vec<f64> {
        if self.t_grid.is_empty() {
            vec![self.t]
        } else {
            self.t_grid.clone()
        }
    }
}

/// Values given on the command line; each one replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A parsed configuration together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub path: Option<PathBuf>,
}

impl LoadedConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        Ok(Self {
            config,
            text: text.to_owned(),
            path: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut loaded = Self::parse(&text).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        loaded.path = Some(path.to_owned());
        Ok(loaded)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        let run = &mut self.config.run;
        if let Some(seed) = overrides.seed {
            run.seed = seed;
        }
        if let Some(paths) = overrides.paths {
            run.paths = paths;
        }
        if let Some(workers) = overrides.workers {
            run.workers = workers;
        }
        if let Some(out) = &overrides.out {
            run.out = Some(out.clone());
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.config.run.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
