//! Error metrics, bootstrap intervals and the two experiments: zero-shot
//! super-resolution and the Pm1 regime sweep.
//!
//! All metrics are computed in normalized units.

use alloc::vec::Vec;

use crate::datagen::{self, DatagenError, Dataset, NormalizationStats, NormalizedRecord, SamplingConfig, Window};
use crate::operators::{Model, ModelKind, OperatorError};
use crate::rng::{self, RngExt};
use crate::smib::{self, SampleGrid, SmibError};
use crate::training::TrainError;

/// Floor of the MASE denominator.
pub const MASE_EPS: f64 = 1e-12;
/// Persistence scale below which a MASE point counts as degenerate.
pub const DEGENERATE_SCALE: f64 = 1e-9;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const DEFAULT_RUNS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("series of length {n} is too short (need at least 2)")]
    TooShort { n: usize },
    #[error("mean coarse RMSE is zero")]
    ZeroCoarseMean,
    #[error("datasets must share SMIB parameters (record {index} differs)")]
    DatasetMismatch { index: usize },
    #[error("invalid sweep config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Smib(#[from] SmibError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Running sum of squared errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredError {
    pub sum: f64,
    pub count: usize,
}

impl SquaredError {
    pub fn add(&mut self, pred: &Window, target: &Window) -> Result<(), EvalError> {
        if pred.len() != target.len() {
            return Err(EvalError::Shape("prediction and target lengths differ"));
        }
        for (p, t) in pred.values.iter().zip(&target.values) {
            for c in 0..2 {
                let e = p[c] - t[c];
                self.sum += e * e;
            }
        }
        self.count += 2 * pred.len();
        Ok(())
    }

    pub fn rmse(&self) -> Result<f64, EvalError> {
        if self.count == 0 {
            return Err(EvalError::Empty);
        }
        Ok(crate::math::sqrt(self.sum / self.count as f64))
    }
}

/// Root mean squared error of two flat series.
pub fn rmse_values(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Shape("prediction and target lengths differ"));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(crate::math::sqrt(s / pred.len() as f64))
}

/// Root mean squared error over every trajectory, time point and channel.
pub fn rmse(pred: &[Window], target: &[Window]) -> Result<f64, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Shape("trajectory counts differ"));
    }
    let mut acc = SquaredError::default();
    for (p, t) in pred.iter().zip(target) {
        acc.add(p, t)?;
    }
    acc.rmse()
}

/// Mean absolute one-step change of `target` over both channels.
pub fn persistence_scale(target: &[[f64; 2]]) -> Result<f64, EvalError> {
    let n = target.len();
    if n < 2 {
        return Err(EvalError::TooShort { n });
    }
    let s: f64 = target.windows(2).map(|w| crate::math::abs(w[1][0] - w[0][0]) + crate::math::abs(w[1][1] - w[0][1])).sum();
    Ok(s / (2 * (n - 1)) as f64)
}

/// Mean absolute error scaled by the previous-step baseline. Both means run
/// over the points `t ≥ 2` where the baseline is defined.
pub fn mase(pred: &[[f64; 2]], target: &[[f64; 2]]) -> Result<f64, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Shape("prediction and target lengths differ"));
    }
    let scale = persistence_scale(target)?;
    let n = target.len();
    let err: f64 = pred[1..]
        .iter()
        .zip(&target[1..])
        .map(|(p, t)| crate::math::abs(p[0] - t[0]) + crate::math::abs(p[1] - t[1]))
        .sum();
    Ok(err / (2 * (n - 1)) as f64 / scale.max(MASE_EPS))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (sample standard deviation over `sqrt(n)`).
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    crate::math::sqrt(var / n as f64)
}

/// Linear-interpolation percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PercentDifference {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn pct(coarse: f64, fine: f64) -> f64 {
    100.0 * (fine - coarse) / coarse
}

/// `100·(mean fine − mean coarse)/mean coarse` with a paired percentile
/// bootstrap interval (2.5/97.5) over run indices.
pub fn percent_difference(coarse: &[f64], fine: &[f64], resamples: usize, seed: u64) -> Result<PercentDifference, EvalError> {
    if coarse.len() != fine.len() {
        return Err(EvalError::Shape("run counts differ"));
    }
    if coarse.is_empty() || resamples == 0 {
        return Err(EvalError::Empty);
    }
    let mc = mean(coarse);
    if mc == 0.0 {
        return Err(EvalError::ZeroCoarseMean);
    }
    let point = pct(mc, mean(fine));
    let n = coarse.len();
    let mut r = rng::stream(&[seed, rng::name_key("bootstrap")]);
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let (mut c, mut f) = (0.0, 0.0);
        for _ in 0..n {
            let i = r.random_range(0..n);
            c += coarse[i];
            f += fine[i];
        }
        if c != 0.0 {
            stats.push(pct(c / n as f64, f / n as f64));
        }
    }
    if stats.is_empty() {
        return Err(EvalError::ZeroCoarseMean);
    }
    stats.sort_by(f64::total_cmp);
    Ok(PercentDifference {
        point,
        ci_low: percentile(&stats, 0.025).min(point),
        ci_high: percentile(&stats, 0.975).max(point),
    })
}

/// Anything that maps normalized records to predictions on a grid.
pub trait Predictor {
    fn predict_records(&self, records: &[NormalizedRecord], grid: SampleGrid) -> Result<Vec<Window>, EvalError>;
}

impl Predictor for Model {
    fn predict_records(&self, records: &[NormalizedRecord], grid: SampleGrid) -> Result<Vec<Window>, EvalError> {
        let inputs: Vec<&Window> = records.iter().map(|r| &r.input).collect();
        Ok(self.predict(&inputs, grid)?)
    }
}

/// Records per prediction call on long grids.
const FINE_BATCH: usize = 8;

/// RMSE of `model` over `records`, predicting on each record's target grid.
pub fn evaluate_rmse<P: Predictor + ?Sized>(model: &P, records: &[NormalizedRecord]) -> Result<f64, EvalError> {
    let grid = records.first().ok_or(EvalError::Empty)?.target.grid();
    let mut acc = SquaredError::default();
    for chunk in records.chunks(FINE_BATCH) {
        let pred = model.predict_records(chunk, grid)?;
        for (p, r) in pred.iter().zip(chunk) {
            if r.target.grid() != grid {
                return Err(EvalError::Shape("records do not share one target grid"));
            }
            acc.add(p, &r.target)?;
        }
    }
    acc.rmse()
}

/// Checks that two datasets were drawn from identical SMIB parameters.
pub fn check_paired(coarse: &Dataset, fine: &Dataset) -> Result<(), EvalError> {
    if coarse.len() != fine.len() {
        return Err(EvalError::DatasetMismatch { index: coarse.len().min(fine.len()) });
    }
    for (i, (a, b)) in coarse.records.iter().zip(&fine.records).enumerate() {
        if a.params != b.params {
            return Err(EvalError::DatasetMismatch { index: i });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunResult {
    pub coarse_rmse: f64,
    pub fine_rmse: f64,
}

/// Evaluates one trained model on the paired coarse and fine test records.
pub fn superres_run<P: Predictor + ?Sized>(
    model: &P,
    coarse: &[NormalizedRecord],
    fine: &[NormalizedRecord],
) -> Result<RunResult, EvalError> {
    Ok(RunResult { coarse_rmse: evaluate_rmse(model, coarse)?, fine_rmse: evaluate_rmse(model, fine)? })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuperResRow {
    pub model: ModelKind,
    pub runs: usize,
    pub trajectories: usize,
    pub coarse_rmse_mean: f64,
    pub coarse_rmse_se: f64,
    pub fine_rmse_mean: f64,
    pub fine_rmse_se: f64,
    /// Undefined when the mean coarse RMSE is zero.
    pub pct_diff: Option<PercentDifference>,
}

/// Aggregates per-run results (ordered by run index) into one table row.
pub fn aggregate_superres(
    model: ModelKind,
    trajectories: usize,
    runs: &[RunResult],
    resamples: usize,
    seed: u64,
) -> Result<SuperResRow, EvalError> {
    let coarse: Vec<f64> = runs.iter().map(|r| r.coarse_rmse).collect();
    let fine: Vec<f64> = runs.iter().map(|r| r.fine_rmse).collect();
    Ok(SuperResRow {
        model,
        runs: runs.len(),
        trajectories,
        coarse_rmse_mean: mean(&coarse),
        coarse_rmse_se: standard_error(&coarse),
        fine_rmse_mean: mean(&fine),
        fine_rmse_se: standard_error(&fine),
        pct_diff: match percent_difference(&coarse, &fine, resamples, seed) {
            Err(EvalError::ZeroCoarseMean) => None,
            other => Some(other?),
        },
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuperResReport {
    pub rows: Vec<SuperResRow>,
}

/// Fits `runs` models with `fit(run)` and evaluates each on the coarse and
/// fine test sets, normalized with `stats`.
pub fn superres_experiment<P: Predictor>(
    model: ModelKind,
    coarse_test: &Dataset,
    fine_test: &Dataset,
    stats: &NormalizationStats,
    runs: usize,
    seed: u64,
    mut fit: impl FnMut(usize) -> Result<P, EvalError>,
) -> Result<SuperResRow, EvalError> {
    check_paired(coarse_test, fine_test)?;
    let coarse = coarse_test.normalized(stats)?;
    let fine = fine_test.normalized(stats)?;
    let results = (0..runs)
        .map(|run| superres_run(&fit(run)?, &coarse, &fine))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_superres(model, coarse.len(), &results, BOOTSTRAP_RESAMPLES, seed)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pm: f64,
    pub d: f64,
    pub points: usize,
    /// Windows, spacing, machine constants and integrator settings.
    pub sampling: SamplingConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { pm: 0.4, d: 0.05, points: 101, sampling: SamplingConfig::default() }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points < 2 {
            return Err(EvalError::Config("at least two sweep points"));
        }
        self.sampling.validate()?;
        self.sampling.machine.params(self.d, self.pm, self.pm)?;
        Ok(())
    }

    /// `points` evenly spaced values of Pm1 over `[0, Pmax]`.
    pub fn grid(&self) -> Vec<f64> {
        let pmax = self.sampling.machine.max_power();
        let m = (self.points - 1) as f64;
        (0..self.points).map(|i| pmax * i as f64 / m).collect()
    }

    /// Lower edge of the unstable range for this machine.
    pub fn threshold(&self) -> Result<f64, EvalError> {
        let p = self.sampling.machine.params(self.d, self.pm, self.pm)?;
        Ok(smib::instability_lower_bound(&p, self.sampling.horizon(), &self.sampling.integrator)?)
    }
}

/// Mean MASE of `models` on the ground truth at one Pm1; `None` when the
/// target barely moves (degenerate scale).
pub fn sweep_point(models: &[Model], config: &SweepConfig, pm1: f64) -> Result<Option<f64>, EvalError> {
    let params = config.sampling.machine.params(config.d, config.pm, pm1)?;
    let (_, input, target) = datagen::simulate_record(&config.sampling, params)?;
    let mut total = 0.0;
    for m in models {
        let inp = datagen::normalize_trajectory(&input, &m.norm_stats)?;
        let tgt = datagen::normalize_trajectory(&target, &m.norm_stats)?;
        if persistence_scale(&tgt.values)? < DEGENERATE_SCALE {
            return Ok(None);
        }
        let pred = m.predict(&[&inp], tgt.grid())?;
        total += mase(&pred[0].values, &tgt.values)?;
    }
    Ok(Some(total / models.len() as f64))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepReport {
    pub model: ModelKind,
    pub pm: f64,
    pub d: f64,
    pub threshold: f64,
    pub pm1: Vec<f64>,
    /// Run-averaged MASE per point for the 0% and 20% training mixes.
    pub mase_mix0: Vec<Option<f64>>,
    pub mase_mix20: Vec<Option<f64>>,
}

impl SweepReport {
    /// Mean of defined values over points with `Pm1 > threshold`.
    pub fn unstable_means(&self) -> (f64, f64) {
        let avg = |v: &[Option<f64>]| {
            let xs: Vec<f64> = self.pm1.iter().zip(v).filter(|(p, _)| **p > self.threshold).filter_map(|(_, m)| *m).collect();
            mean(&xs)
        };
        (avg(&self.mase_mix0), avg(&self.mase_mix20))
    }
}

/// MASE along the Pm1 grid for models trained without and with unstable
/// trajectories.
pub fn regime_sweep(mix0: &[Model], mix20: &[Model], config: &SweepConfig) -> Result<SweepReport, EvalError> {
    config.validate()?;
    if mix0.is_empty() || mix20.is_empty() {
        return Err(EvalError::Empty);
    }
    let model = mix0[0].kind();
    let pm1 = config.grid();
    let mut mase_mix0 = Vec::with_capacity(pm1.len());
    let mut mase_mix20 = Vec::with_capacity(pm1.len());
    for &p in &pm1 {
        mase_mix0.push(sweep_point(mix0, config, p)?);
        mase_mix20.push(sweep_point(mix20, config, p)?);
    }
    Ok(SweepReport { model, pm: config.pm, d: config.d, threshold: config.threshold()?, pm1, mase_mix0, mase_mix20 })
}
