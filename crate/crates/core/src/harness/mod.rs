//! Experiment configuration, dataset generation and the scripted benchmark runs.
//!
//! Configs are TOML. Only `id` is required; every other key falls back to the
//! preset for that experiment (see [`ExperimentConfig::preset`]).

mod commands;
mod experiments;
mod methods;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssmodel::{LorenzConfig, NoiseConfig};
use crate::training::TrainConfig;

pub use commands::{cmd_evaluate, cmd_simulate, cmd_train, regenerate_dataset, SimulateOutput, TrainOutput};
pub use experiments::{
    experiment_decimation, experiment_linear_mismatch, experiment_lorenz_mismatch, experiment_scaling, run_experiment,
};
pub use methods::{assess, benchmark_inference, ModelBasedSmoother, OracleSmoother, Smoother, TimingStats};
pub use report::{CurveRow, ExperimentReport, TimingRow, Track, TrainingRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    LinearMismatch,
    Scaling,
    LorenzMismatch,
    Decimation,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::LinearMismatch,
        ExperimentId::Scaling,
        ExperimentId::LorenzMismatch,
        ExperimentId::Decimation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::LinearMismatch => "linear-mismatch",
            ExperimentId::Scaling => "scaling",
            ExperimentId::LorenzMismatch => "lorenz-mismatch",
            ExperimentId::Decimation => "decimation",
        }
    }

    /// Whether the batch-MAP oracle column applies.
    pub fn is_linear(self) -> bool {
        matches!(self, ExperimentId::LinearMismatch | ExperimentId::Scaling)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|id| id.as_str() == s).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|id| id.as_str()).collect();
            Error::Config(format!(
                "unknown experiment `{s}` (expected one of {})",
                known.join(", ")
            ))
        })
    }
}

/// One linear system of the canonical family `F = ρ·C_m`, `H = C_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub m: usize,
    pub n: usize,
    /// Overrides the experiment-level training length for this system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_horizon: Option<usize>,
    /// Overrides the experiment-level training set size for this system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_count: Option<usize>,
    /// Overrides the output-head width multiplier of the gain networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_mult: Option<usize>,
}

impl SystemSpec {
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            train_horizon: None,
            train_count: None,
            out_mult: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.m, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    /// Values of `1/r²` in dB.
    pub sweep_db: Vec<f64>,
    /// `ν = q²/r²` in dB.
    pub nu_db: f64,
    /// Rotation of the observation matrix assumed by the mismatched methods, in degrees.
    pub alpha_deg: f64,
    pub train_horizon: usize,
    pub test_horizon: usize,
    /// Training trajectories per sweep point, validation included.
    pub train_count: usize,
    pub test_count: usize,
    /// Linear systems; `linear-mismatch` and the `simulate` command use the first.
    pub systems: Vec<SystemSpec>,
    /// Scale of the canonical linear transition matrix.
    pub rho: f64,
    pub lorenz: LorenzConfig,
    /// Fine integration steps per retained sample in the decimation experiment.
    pub decimation_ratio: usize,
    /// Mean initial state; empty means the origin (linear) or `(1, 1, 1)` (Lorenz).
    pub x0: Vec<f64>,
    /// Standard deviation of the random perturbation of `x0`.
    pub init_std: f64,
    /// Candidate process-noise levels for the extended smoother when `q²` is unknown.
    pub eks_q2_grid: Vec<f64>,
    pub timing_repeats: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// Run sweep points on separate threads.
    pub parallel: bool,
    /// Also write a gnuplot command file next to the curves.
    pub plot_script: bool,
    /// Dataset read by `train` and `evaluate` instead of simulating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Trained model read by `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for each experiment, sized to run on a single CPU.
    pub fn preset(id: ExperimentId) -> Self {
        let base = Self {
            id,
            sweep_db: vec![-10.0, 0.0, 10.0, 20.0],
            nu_db: 0.0,
            alpha_deg: 0.0,
            train_horizon: 100,
            test_horizon: 100,
            train_count: 1000,
            test_count: 200,
            systems: vec![SystemSpec::new(2, 2)],
            rho: 0.9,
            lorenz: LorenzConfig::default(),
            decimation_ratio: 100,
            x0: Vec::new(),
            init_std: 0.0,
            eks_q2_grid: vec![1e-4, 1e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0],
            timing_repeats: 3,
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            out: PathBuf::from("runs"),
            seed: 0,
            parallel: false,
            plot_script: false,
            dataset: None,
            model: None,
        };
        match id {
            ExperimentId::LinearMismatch => Self {
                alpha_deg: 10.0,
                ..base
            },
            ExperimentId::Scaling => Self {
                sweep_db: vec![0.0],
                nu_db: -20.0,
                test_horizon: 1000,
                test_count: 100,
                systems: vec![
                    SystemSpec::new(2, 2),
                    SystemSpec {
                        train_horizon: Some(20),
                        train_count: Some(500),
                        ..SystemSpec::new(5, 5)
                    },
                    SystemSpec {
                        train_horizon: Some(20),
                        train_count: Some(200),
                        out_mult: Some(10),
                        ..SystemSpec::new(10, 10)
                    },
                ],
                train: TrainConfig {
                    epochs: 30,
                    ..base.train
                },
                ..base
            },
            ExperimentId::LorenzMismatch => Self {
                alpha_deg: 1.0,
                nu_db: -20.0,
                train_count: 500,
                test_count: 100,
                init_std: 1.0,
                train: TrainConfig {
                    epochs: 30,
                    batch_size: 16,
                    weight_decay: 1e-6,
                    ..base.train
                },
                ..base
            },
            ExperimentId::Decimation => Self {
                sweep_db: vec![0.0],
                train_count: 200,
                test_count: 100,
                init_std: 1.0,
                train: TrainConfig {
                    epochs: 100,
                    batch_size: 16,
                    weight_decay: 1e-6,
                    ..base.train
                },
                ..base
            },
        }
    }

    /// Parses TOML, filling unspecified keys from the preset of the requested experiment.
    ///
    /// `id` overrides (or supplies) the `id` key of the document.
    pub fn from_toml_str(text: &str, id: Option<ExperimentId>) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        let id = match (id, doc.get("id")) {
            (Some(id), _) => id,
            (None, Some(v)) => v
                .as_str()
                .ok_or_else(|| Error::Config("`id` must be a string".into()))?
                .parse()?,
            (None, None) => return Err(Error::Config("config has no `id`".into())),
        };
        doc.insert("id".into(), toml::Value::String(id.as_str().into()));
        let mut merged = toml::Table::try_from(Self::preset(id))
            .map_err(|e| Error::Config(format!("preset does not serialize: {e}")))?;
        merge(&mut merged, doc);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, id: Option<ExperimentId>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, id).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.sweep_db.is_empty() {
            return bad("sweep_db must not be empty".into());
        }
        if self.sweep_db.iter().any(|v| !v.is_finite()) || !self.nu_db.is_finite() || !self.alpha_deg.is_finite() {
            return bad("sweep, ν and α must be finite".into());
        }
        if self.train_horizon == 0 || self.test_horizon == 0 {
            return bad("sequence lengths must be at least 1".into());
        }
        if self.train_count < 2 || self.test_count == 0 {
            return bad("need at least 2 training and 1 test trajectory".into());
        }
        if self.systems.is_empty() || self.systems.iter().any(|s| s.m == 0 || s.n == 0) {
            return bad("systems must be non-empty with positive dimensions".into());
        }
        if self
            .systems
            .iter()
            .any(|s| s.train_count.is_some_and(|c| c < 2) || s.train_horizon == Some(0))
        {
            return bad("per-system training sizes must be positive".into());
        }
        if self.decimation_ratio == 0 {
            return bad("decimation_ratio must be at least 1".into());
        }
        if self.init_std.is_nan() || self.init_std < 0.0 {
            return bad("init_std must be non-negative".into());
        }
        if self.eks_q2_grid.is_empty() || self.eks_q2_grid.iter().any(|q| q.is_nan() || *q < 0.0) {
            return bad("eks_q2_grid must hold non-negative values".into());
        }
        if self.timing_repeats < 3 {
            return bad("timing_repeats must be at least 3".into());
        }
        self.lorenz.validate()?;
        self.train.validate()?;
        for path in [&self.dataset, &self.model].into_iter().flatten() {
            if !path.exists() {
                return bad(format!("referenced file {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    /// Noise levels at sweep point `1/r² = inv_r2_db`.
    pub fn noise_at(&self, inv_r2_db: f64) -> NoiseConfig {
        NoiseConfig::from_db(inv_r2_db, self.nu_db)
    }

    /// Initial state mean for a system of dimension `m`.
    pub fn initial_state(&self, m: usize) -> Result<Vec<f64>> {
        match (self.x0.is_empty(), self.id.is_linear()) {
            (true, true) => Ok(vec![0.0; m]),
            (true, false) => Ok(vec![1.0; 3]),
            (false, _) if self.x0.len() == m => Ok(self.x0.clone()),
            _ => Err(Error::Dimension(format!(
                "x0 has length {}, the state is R^{m}",
                self.x0.len()
            ))),
        }
    }

    /// Output directory of this experiment.
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.id.as_str())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Independent seed number `stream` derived from `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Seeds used at one sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PointSeeds {
    pub train_data: u64,
    pub test_data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl PointSeeds {
    pub fn new(seed: u64, point: usize) -> Self {
        let s = derive_seed(seed, point as u64 + 1);
        Self {
            train_data: derive_seed(s, 1),
            test_data: derive_seed(s, 2),
            init: derive_seed(s, 3),
            shuffle: derive_seed(s, 4),
        }
    }
}

/// Identity observation rotated by `alpha_deg`, as used by the Lorenz experiments.
pub(crate) fn rotated_identity(alpha_deg: f64) -> Result<DMatrix<f64>> {
    crate::ssmodel::rotate_observation(&DMatrix::identity(3, 3), alpha_deg)
}
