//! Experiment manifest: one strict JSON document with every default filled
//! in.

use std::path::{Path, PathBuf};

use psno_core::datagen::SamplingConfig;
use psno_core::evaluation::{SweepConfig, BOOTSTRAP_RESAMPLES, DEFAULT_RUNS};
use psno_core::numcore::AdamConfig;
use psno_core::operators::{DeepONetConfig, FnoConfig, LnodeConfig, LnodeSolver, ModelConfig, ModelKind};
use psno_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable that replaces every seed in the config.
pub const SEED_ENV: &str = "PSNO_SEED";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub deeponet: DeepONetConfig,
    pub fno: FnoConfig,
    /// Shared by both latent ODE kinds; the solver follows the kind.
    pub lnode: LnodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    /// `null` selects 600 epochs for DeepONet and 60 otherwise.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub allow_any_size: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { epochs: None, batch_size: t.batch_size, adam: t.adam, allow_any_size: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub runs: usize,
    /// Sample spacing of the fine-resolution test set.
    pub fine_dt: f64,
    pub bootstrap_resamples: usize,
    pub sweep_pm: f64,
    pub sweep_d: f64,
    pub sweep_points: usize,
    /// Test trajectories drawn in each overlay plot.
    pub overlay_count: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            runs: DEFAULT_RUNS,
            fine_dt: 5e-5,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
            sweep_pm: s.pm,
            sweep_d: s.d,
            sweep_points: s.points,
            overlay_count: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { data_dir: PathBuf::from("data"), out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    /// Replaces `sampling.seed`.
    pub data: u64,
    /// Base seed of training run `r` is `train + r`.
    pub train: u64,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sampling: SamplingConfig,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
    pub seeds: SeedsSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{SEED_ENV} must be an unsigned integer, got {0:?}")]
    Seed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    /// Loads `path` or the defaults, then applies the seed override.
    pub fn resolve(path: Option<&Path>, env_seed: Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = env_seed {
            let seed = s.trim().parse::<u64>().map_err(|_| ConfigError::Seed(s.clone()))?;
            cfg.seeds = SeedsSection { data: seed, train: seed, bootstrap: seed };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.sampling().validate().map_err(|e| bad(&e))?;
        for kind in ModelKind::ALL {
            self.model_config(kind).validate().map_err(|e| bad(&e))?;
            self.train_config(kind, 0).validate().map_err(|e| bad(&e))?;
        }
        self.sweep_config().validate().map_err(|e| bad(&e))?;
        let e = &self.evaluation;
        if e.runs == 0 || e.bootstrap_resamples == 0 {
            return Err(ConfigError::Invalid("runs and bootstrap_resamples must be at least 1".into()));
        }
        SamplingConfig { dt: e.fine_dt, ..self.sampling() }.validate().map_err(|e| bad(&e))?;
        Ok(())
    }

    /// Sampling settings with the data seed applied.
    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig { seed: self.seeds.data, ..self.sampling.clone() }
    }

    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        match kind {
            ModelKind::DeepONet => ModelConfig::DeepONet(self.model.deeponet.clone()),
            ModelKind::Fno => ModelConfig::Fno(self.model.fno.clone()),
            ModelKind::LnodeFixed => ModelConfig::Lnode(LnodeConfig { solver: LnodeSolver::FixedAdams, ..self.model.lnode.clone() }),
            ModelKind::LnodeAdaptive => {
                ModelConfig::Lnode(LnodeConfig { solver: LnodeSolver::AdaptiveDopri, ..self.model.lnode.clone() })
            }
        }
    }

    /// Training settings of run `run` for `kind`.
    pub fn train_config(&self, kind: ModelKind, run: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs.unwrap_or(kind.default_epochs()),
            batch_size: t.batch_size,
            adam: t.adam,
            seed: self.seeds.train.wrapping_add(run),
            allow_any_size: t.allow_any_size,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let e = &self.evaluation;
        SweepConfig { pm: e.sweep_pm, d: e.sweep_d, points: e.sweep_points, sampling: self.sampling() }
    }

    /// Pretty-printed defaults, shown in `--help`.
    pub fn defaults_json() -> String {
        serde_json::to_string_pretty(&Self::default()).expect("defaults serialize")
    }
}
