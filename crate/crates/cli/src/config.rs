//! Run configuration: one JSON file drives every pipeline stage, checked
//! into the run directory for provenance.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use sdrl_core::fnn::ActivationKind;
use sdrl_core::models::{ModelSpec, SemilinearSystem};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: ModelSpec,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub count: usize,
    pub start_index: u64,
    pub tolerance: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            count: 1000,
            start_index: 1,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingTarget {
    /// Fit the feedback law directly (vector output, plain MSE).
    DirectControl,
    /// Fit the value function with the gradient-augmented loss.
    ValueGradient,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub target: TrainingTarget,
    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    pub mu_v: f64,
    pub mu_dv: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lbfgs_memory: usize,
    pub steps_per_batch: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub seed: u64,
    pub wolfe: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            target: TrainingTarget::ValueGradient,
            hidden: vec![500, 500, 500],
            activation: ActivationKind::Relu,
            mu_v: 0.9,
            mu_dv: 7.0,
            epochs: 71,
            batch_size: 100,
            lbfgs_memory: 10,
            steps_per_batch: 10,
            train_fraction: 0.8,
            split_seed: 17,
            seed: 1,
            wolfe: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub count: usize,
    /// Halton start index for the held-out grid; defaults to the index
    /// right after the training samples so the sets are disjoint.
    pub start_index: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            count: 10_000,
            start_index: None,
        }
    }
}

/// Starting state, resolved against the system dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Zeros,
    Constant { value: f64 },
    Explicit { values: Vec<f64> },
    /// Whole state vector with equally spaced entries.
    Linspace { lo: f64, hi: f64 },
    /// Consecutive equal blocks, each with equally spaced entries (e.g.
    /// positions then velocities).
    BlockLinspace { lo: f64, hi: f64, blocks: usize },
    /// `1 + (1 - s) s` on the unit grid `s_i = i / (n - 1)`.
    QuadraticProfile,
}

impl InitialState {
    pub fn resolve(&self, n: usize) -> Result<DVector<f64>, String> {
        match self {
            InitialState::Zeros => Ok(DVector::zeros(n)),
            InitialState::Constant { value } => Ok(DVector::from_element(n, *value)),
            InitialState::Explicit { values } => {
                if values.len() != n {
                    return Err(format!(
                        "explicit x0 has {} entries, system expects {n}",
                        values.len()
                    ));
                }
                Ok(DVector::from_row_slice(values))
            }
            InitialState::Linspace { lo, hi } => Ok(linspace(*lo, *hi, n)),
            InitialState::BlockLinspace { lo, hi, blocks } => {
                if *blocks == 0 || n % blocks != 0 {
                    return Err(format!("{n} states cannot be cut into {blocks} blocks"));
                }
                let len = n / blocks;
                let block = linspace(*lo, *hi, len);
                let mut out = DVector::zeros(n);
                for b in 0..*blocks {
                    out.rows_mut(b * len, len).copy_from(&block);
                }
                Ok(out)
            }
            InitialState::QuadraticProfile => Ok(DVector::from_fn(n, |i, _| {
                let s = i as f64 / (n - 1) as f64;
                1.0 + (1.0 - s) * s
            })),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> DVector<f64> {
    if n == 1 {
        return DVector::from_element(1, lo);
    }
    DVector::from_fn(n, |i, _| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub controllers: Vec<String>,
    pub x0: InitialState,
    pub horizon: f64,
    pub dt: f64,
    pub refresh_steps: usize,
    pub tolerance: f64,
    /// Checkpoint paths for the network controllers; default to
    /// `<out_dir>/model.ckpt`.
    pub value_checkpoint: Option<PathBuf>,
    pub control_checkpoint: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            controllers: vec!["zero".into(), "sdre".into()],
            x0: InitialState::Zeros,
            horizon: 10.0,
            dt: 0.01,
            refresh_steps: 1,
            tolerance: 1e-9,
            value_checkpoint: None,
            control_checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn build_system(&self) -> anyhow::Result<SemilinearSystem> {
        self.system
            .build()
            .map_err(|e| anyhow::anyhow!("cannot build system: {e}"))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }

    pub fn history_path(&self) -> PathBuf {
        self.out_dir.join("history.csv")
    }

    pub fn eval_path(&self) -> PathBuf {
        self.out_dir.join("eval.json")
    }
}
