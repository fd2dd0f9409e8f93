//! Relative H1 loss and the mini-batch training loop.
//!
//! Per channel `c`, the loss is
//! `sqrt(‖u−û‖² + ‖u'−û'‖²) / sqrt(‖u‖² + ‖u'‖² + ε)` with `‖v‖² = dt·Σ v²`
//! and `v'` the finite-difference derivative (central inside, one-sided at
//! the ends). The sample loss is the channel mean and the batch loss the
//! sample mean.

use alloc::string::String;
use alloc::vec::Vec;

use crate::datagen::{DatagenError, NormalizationStats, NormalizedRecord, SplitDatasets};
use crate::numcore::{AdamConfig, AdamState, Graph, NumError, Tensor};
use crate::operators::{count_params, within_budget, Model, ModelConfig, ModelKind, OperatorError};
use crate::rng::{self, RngExt};
use crate::smib::SampleGrid;

/// Denominator guard of the relative H1 error.
pub const H1_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model has {count} parameters, outside the 700k ±10% budget")]
    Budget { count: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("records do not share one target grid")]
    MixedGrids,
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Relative H1 error between two `(δ', ω')` series on spacing `dt`.
pub fn h1_loss(pred: &[[f64; 2]], target: &[[f64; 2]], dt: f64) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(NumError::Length { expected: target.len(), got: pred.len() }.into());
    }
    let n = pred.len();
    let flat = |v: &[[f64; 2]]| v.iter().flatten().copied().collect::<Vec<f64>>();
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(alloc::vec![1, n, 2], flat(pred))?);
    let l = g.h1_loss(p, Tensor::new(alloc::vec![1, n, 2], flat(target))?, dt, H1_EPS)?;
    Ok(g.value(l).item())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Seeds parameter initialization and the per-epoch shuffles.
    pub seed: u64,
    /// Skip the parameter-budget check.
    pub allow_any_size: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, batch_size: 64, adam: AdamConfig::default(), seed: 0, allow_any_size: false }
    }
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self { epochs: kind.default_epochs(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(String::from("epochs and batch_size must be at least 1")));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(TrainError::Config(String::from("invalid Adam hyperparameters")));
        }
        Ok(())
    }
}

/// Normalized training and validation records.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub stats: NormalizationStats,
    pub train: Vec<NormalizedRecord>,
    pub val: Vec<NormalizedRecord>,
}

impl TrainingData {
    /// Normalizes both splits with the training-split statistics.
    pub fn from_splits(splits: &SplitDatasets) -> Result<Self, TrainError> {
        let stats = splits.train.stats.ok_or(TrainError::EmptySplit("train"))?;
        Ok(Self { stats, train: splits.train.normalized(&stats)?, val: splits.val.normalized(&stats)? })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub param_count: usize,
    /// Losses of the initialized model, before any update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Mean training loss over each epoch's batches.
    pub train_loss: Vec<f64>,
    /// Validation loss after each epoch.
    pub val_loss: Vec<f64>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    /// Filled in by callers that have a clock.
    pub wall_seconds: Option<f64>,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

fn common_grid(records: &[NormalizedRecord]) -> Result<SampleGrid, TrainError> {
    let g = records.first().ok_or(TrainError::EmptySplit("train"))?.target.grid();
    if records.iter().any(|r| r.target.grid() != g) {
        return Err(TrainError::MixedGrids);
    }
    Ok(g)
}

fn batch_target(records: &[&NormalizedRecord], n: usize) -> Result<Tensor, TrainError> {
    let data: Vec<f64> = records.iter().flat_map(|r| r.target.flat()).collect();
    Ok(Tensor::new(alloc::vec![records.len(), n, 2], data)?)
}

/// Sample-weighted mean loss of `model` over `records`.
pub fn evaluate_loss(model: &Model, records: &[NormalizedRecord], batch_size: usize) -> Result<f64, TrainError> {
    let grid = common_grid(records)?;
    let times = grid.times();
    let mut total = 0.0;
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&NormalizedRecord> = chunk.iter().collect();
        let inputs: Vec<_> = refs.iter().map(|r| &r.input).collect();
        let mut g = Graph::new();
        let vars = g.params_from(&model.params, false);
        let y = model.config.forward(&mut g, &vars, &inputs, &times)?;
        let l = g.h1_loss(y, batch_target(&refs, grid.len)?, grid.dt, H1_EPS)?;
        total += g.value(l).item() * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

/// Fits a freshly initialized model and returns the parameters of the
/// epoch with the lowest validation loss.
pub fn train(config: &ModelConfig, data: &TrainingData, cfg: &TrainConfig) -> Result<(Model, TrainReport), TrainError> {
    train_with(config, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: &ModelConfig,
    data: &TrainingData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    config.validate()?;
    let count = count_params(config);
    if !cfg.allow_any_size && !within_budget(count) {
        return Err(TrainError::Budget { count });
    }
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    let grid = common_grid(&data.train)?;
    if common_grid(&data.val)? != grid {
        return Err(TrainError::MixedGrids);
    }
    let times = grid.times();

    let mut model = Model::new(config.clone(), cfg.seed, data.stats)?;
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let mut report = TrainReport {
        kind: config.kind(),
        param_count: count,
        initial_train_loss: evaluate_loss(&model, &data.train, cfg.batch_size)?,
        initial_val_loss: evaluate_loss(&model, &data.val, cfg.batch_size)?,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        wall_seconds: None,
    };
    let mut best = model.params.clone();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut shuffle = rng::stream(&[cfg.seed, rng::name_key("shuffle"), epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = (shuffle.random::<u64>() % (i as u64 + 1)) as usize;
            order.swap(i, j);
        }
        let mut total = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let recs: Vec<&NormalizedRecord> = idx.iter().map(|i| &data.train[*i]).collect();
            let inputs: Vec<_> = recs.iter().map(|r| &r.input).collect();
            let mut g = Graph::new();
            let vars = g.params_from(&model.params, true);
            let y = model.config.forward(&mut g, &vars, &inputs, &times)?;
            let l = g.h1_loss(y, batch_target(&recs, grid.len)?, grid.dt, H1_EPS)?;
            let loss = g.value(l).item();
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: bi + 1 });
            }
            let grads = g.param_grads(&g.backward(l));
            adam.step(&mut model.params, &grads)?;
            total += loss * idx.len() as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let val_loss = evaluate_loss(&model, &data.val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: 0 });
        }
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        if report.best_epoch == 0 || val_loss < report.best_val_loss() {
            report.best_epoch = epoch;
            best = model.params.clone();
        }
        on_epoch(&EpochSummary { epoch, train_loss, val_loss });
    }
    model.params = best;
    Ok((model, report))
}
