//! Labeled SMIB trajectory datasets.
//!
//! Each record draws `Pm` and `D` uniformly, picks a post-disturbance input
//! `Pm1` from the stable or the unstable range, integrates once over the full
//! horizon and slices the input window `[0, τ]` and target window
//! `[τ_out, T]` off the dense solution. Records are stored in physical units;
//! clipping and normalization happen in [`normalize`].
//!
//! Every record has its own random stream keyed by `(seed, split, index)`, so
//! a record's parameters do not depend on the sample spacing, on the other
//! splits, or on generation order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::math::{abs, round, PI};
use crate::ode::DenseOptions;
use crate::rng::{self, Pcg64};
use crate::smib::{self, SampleGrid, SmibError, SmibParams, StabilityLabel, Trajectory};

/// Parameter draws allowed before unstable sampling gives up.
pub const MAX_RESAMPLES: usize = 1000;
/// `Pm1` redraws inside a bracket before the parameters are redrawn.
const MAX_PM1_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid sampling config: {0}")]
    Config(String),
    #[error("physics error: {0}")]
    Physics(#[from] SmibError),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("degenerate normalization statistics")]
    DegenerateStats,
    #[error("window has {got} samples, expected {expected}")]
    WindowLength { expected: usize, got: usize },
}

/// Machine constants shared by every record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineConstants {
    pub e: f64,
    pub v: f64,
    pub x: f64,
    pub h: f64,
    pub f0: f64,
}

impl Default for MachineConstants {
    fn default() -> Self {
        Self {
            e: SmibParams::REF_E,
            v: SmibParams::REF_V,
            x: SmibParams::REF_X,
            h: SmibParams::REF_H,
            f0: SmibParams::REF_F0,
        }
    }
}

impl MachineConstants {
    pub fn params(&self, d: f64, pm: f64, pm1: f64) -> Result<SmibParams, SmibError> {
        SmibParams::new(self.e, self.v, self.x, self.h, d, self.f0, pm, pm1)
    }

    pub fn max_power(&self) -> f64 {
        abs(self.e) * abs(self.v) / self.x
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub pm_range: [f64; 2],
    pub d_range: [f64; 2],
    pub unstable_fraction: f64,
    /// Output sample spacing in seconds.
    pub dt: f64,
    pub input_window: [f64; 2],
    pub target_window: [f64; 2],
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub machine: MachineConstants,
    pub integrator: DenseOptions,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            pm_range: [0.0, 2.0],
            d_range: [0.0, 0.135],
            unstable_fraction: 0.0,
            dt: 0.1,
            input_window: [0.0, 0.2],
            target_window: [0.3, 3.1],
            n_train: 8000,
            n_val: 1000,
            n_test: 200,
            seed: 0,
            machine: MachineConstants::default(),
            integrator: DenseOptions::default(),
        }
    }
}

fn divides(len: f64, dt: f64) -> bool {
    let k = round(len / dt);
    abs(len - k * dt) <= 1e-12 && k >= 1.0
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::Config(String::from(m)));
        let ranges = [self.pm_range, self.d_range, self.input_window, self.target_window];
        if ranges.iter().flatten().any(|v| !v.is_finite()) || !self.dt.is_finite() {
            return bad("non-finite value");
        }
        if self.pm_range[0] > self.pm_range[1] || self.d_range[0] > self.d_range[1] {
            return bad("empty sampling interval");
        }
        if self.pm_range[0] < 0.0 || self.pm_range[1] >= self.machine.max_power() {
            return bad("pm_range must lie in [0, Pmax)");
        }
        if self.d_range[0] < 0.0 {
            return bad("damping must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.unstable_fraction) {
            return bad("unstable_fraction must be in [0, 1]");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.input_window[0] != 0.0 || !(self.input_window[1] > 0.0) {
            return bad("input window must be [0, tau] with tau > 0");
        }
        if !(self.target_window[0] >= self.input_window[1] && self.target_window[1] > self.target_window[0]) {
            return bad("target window must follow the input window");
        }
        let lin = self.input_window[1] - self.input_window[0];
        let lt = self.target_window[1] - self.target_window[0];
        if !divides(lin, self.dt) || !divides(lt, self.dt) {
            return bad("dt must divide both window lengths");
        }
        self.machine.params(0.0, self.pm_range[1], 0.0)?;
        Ok(())
    }

    pub fn input_grid(&self) -> SampleGrid {
        SampleGrid::spanning(self.input_window[0], self.input_window[1], self.dt)
    }

    pub fn target_grid(&self) -> SampleGrid {
        SampleGrid::spanning(self.target_window[0], self.target_window[1], self.dt)
    }

    pub fn horizon(&self) -> f64 {
        self.target_window[1]
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// Number of unstable records in a split of size `n`.
    pub fn unstable_count(&self, n: usize) -> usize {
        round(self.unstable_fraction * n as f64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn key(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub params: SmibParams,
    pub label: StabilityLabel,
    pub input: Trajectory,
    pub target: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationStats {
    pub delta_min: f64,
    pub delta_max: f64,
    pub omega_absmax: f64,
}

impl NormalizationStats {
    pub fn new(delta_min: f64, delta_max: f64, omega_absmax: f64) -> Result<Self, DatagenError> {
        let s = Self { delta_min, delta_max, omega_absmax };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), DatagenError> {
        let ok = self.delta_min.is_finite()
            && self.delta_max.is_finite()
            && self.omega_absmax.is_finite()
            && self.delta_min < self.delta_max
            && self.omega_absmax > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DatagenError::DegenerateStats)
        }
    }

    pub fn norm_delta(&self, delta: f64) -> f64 {
        (delta.min(PI) - self.delta_min) / (self.delta_max - self.delta_min)
    }

    pub fn norm_omega(&self, omega: f64) -> f64 {
        omega / self.omega_absmax
    }

    pub fn denorm_delta(&self, v: f64) -> f64 {
        self.delta_min + v * (self.delta_max - self.delta_min)
    }

    pub fn denorm_omega(&self, v: f64) -> f64 {
        v * self.omega_absmax
    }
}

/// Normalized two-channel `(δ', ω')` series on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<[f64; 2]>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> SampleGrid {
        SampleGrid::new(self.t0, self.dt, self.values.len())
    }

    /// Piecewise-linear value at `t`, held constant outside the window.
    pub fn interpolate(&self, t: f64) -> [f64; 2] {
        let n = self.values.len();
        if n == 1 {
            return self.values[0];
        }
        let pos = (t - self.t0) / self.dt;
        if pos <= 0.0 {
            return self.values[0];
        }
        if pos >= (n - 1) as f64 {
            return self.values[n - 1];
        }
        let i = libm::floor(pos) as usize;
        let i = i.min(n - 2);
        let w = pos - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

    /// Interleaved `[n, 2]` layout.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRecord {
    pub input: Window,
    pub target: Window,
}

fn normalize_traj(t: &Trajectory, stats: &NormalizationStats) -> Window {
    Window {
        t0: t.t0,
        dt: t.dt,
        values: t.delta.iter().zip(&t.omega).map(|(d, w)| [stats.norm_delta(*d), stats.norm_omega(*w)]).collect(),
    }
}

/// Clips `δ` at π on both windows and maps to the normalized codomain.
pub fn normalize(record: &TrajectoryRecord, stats: &NormalizationStats) -> Result<NormalizedRecord, DatagenError> {
    stats.check()?;
    Ok(NormalizedRecord { input: normalize_traj(&record.input, stats), target: normalize_traj(&record.target, stats) })
}

/// Normalizes a single trajectory.
pub fn normalize_trajectory(t: &Trajectory, stats: &NormalizationStats) -> Result<Window, DatagenError> {
    stats.check()?;
    Ok(normalize_traj(t, stats))
}

/// Inverse of [`normalize`] (exact for `δ <= π`).
pub fn denormalize(window: &Window, stats: &NormalizationStats) -> Result<Trajectory, DatagenError> {
    stats.check()?;
    Ok(Trajectory {
        t0: window.t0,
        dt: window.dt,
        delta: window.values.iter().map(|v| stats.denorm_delta(v[0])).collect(),
        omega: window.values.iter().map(|v| stats.denorm_omega(v[1])).collect(),
    })
}

/// Min/max of clipped `δ` and max `|ω|` over both windows of every record.
pub fn compute_stats(records: &[TrajectoryRecord]) -> Result<NormalizationStats, DatagenError> {
    let mut dmin = f64::INFINITY;
    let mut dmax = f64::NEG_INFINITY;
    let mut wmax = 0.0f64;
    for r in records {
        for t in [&r.input, &r.target] {
            for &d in &t.delta {
                let d = d.min(PI);
                dmin = dmin.min(d);
                dmax = dmax.max(d);
            }
            for &w in &t.omega {
                wmax = wmax.max(abs(w));
            }
        }
    }
    NormalizationStats::new(dmin, dmax, wmax)
}

/// Integrates `params` and returns the label with the input and target windows.
pub fn simulate_record(config: &SamplingConfig, params: SmibParams) -> Result<(StabilityLabel, Trajectory, Trajectory), DatagenError> {
    let sol = smib::solve(&params, params.initial_state()?, config.horizon(), &config.integrator)?;
    let full = Trajectory::sample(&sol, SampleGrid::spanning(0.0, config.horizon(), smib::CLASSIFY_DT));
    let label = smib::classify(&full)?;
    Ok((label, Trajectory::sample(&sol, config.input_grid()), Trajectory::sample(&sol, config.target_grid())))
}

fn draw_machine(rng: &mut Pcg64, config: &SamplingConfig) -> Result<SmibParams, DatagenError> {
    let pm = rng::uniform(rng, config.pm_range[0], config.pm_range[1]);
    let d = rng::uniform(rng, config.d_range[0], config.d_range[1]);
    Ok(config.machine.params(d, pm, pm)?)
}

/// A record from the stable range `Pm1 ~ U[0, Pm1max]` (undamped bound).
pub fn sample_stable(rng: &mut Pcg64, config: &SamplingConfig) -> Result<TrajectoryRecord, DatagenError> {
    let base = draw_machine(rng, config)?;
    let upper = smib::pm1_max(&base)?;
    let params = base.with_pm1(rng::uniform(rng, 0.0, upper));
    let (label, input, target) = simulate_record(config, params)?;
    if label != StabilityLabel::Stable {
        return Err(DatagenError::Consistency(alloc::format!(
            "stable draw lost synchronism: Pm={} D={} Pm1={}",
            params.pm(),
            params.d(),
            params.pm1()
        )));
    }
    Ok(TrajectoryRecord { params, label, input, target })
}

/// A record from the unstable range `Pm1 ~ U[bound, Pmax]`, where `bound` is
/// the bisection estimate of the instability boundary for the drawn damping.
pub fn sample_unstable(rng: &mut Pcg64, config: &SamplingConfig) -> Result<TrajectoryRecord, DatagenError> {
    for _ in 0..MAX_RESAMPLES {
        let base = draw_machine(rng, config)?;
        let bound = match smib::instability_lower_bound(&base, config.horizon(), &config.integrator) {
            Ok(b) => b,
            Err(SmibError::Resample { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let pmax = base.max_power();
        for _ in 0..MAX_PM1_REDRAWS {
            let params = base.with_pm1(rng::uniform(rng, bound, pmax));
            let (label, input, target) = simulate_record(config, params)?;
            if label == StabilityLabel::Unstable {
                return Ok(TrajectoryRecord { params, label, input, target });
            }
        }
    }
    Err(DatagenError::Config(alloc::format!("{MAX_RESAMPLES} consecutive resamples without an unstable trajectory")))
}

/// Random stream of record `index` in `split`.
pub fn record_stream(seed: u64, split: Split, index: usize) -> Pcg64 {
    rng::stream(&[seed, split.key(), index as u64])
}

/// Generates record `index` of `split`; the first `unstable_count` indices
/// are unstable.
pub fn generate_record(config: &SamplingConfig, split: Split, index: usize) -> Result<TrajectoryRecord, DatagenError> {
    let mut r = record_stream(config.seed, split, index);
    if index < config.unstable_count(config.split_size(split)) {
        sample_unstable(&mut r, config)
    } else {
        sample_stable(&mut r, config)
    }
}

/// One split of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SamplingConfig,
    pub split: Split,
    /// Training-split statistics; absent when the training split is empty.
    pub stats: Option<NormalizationStats>,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn unstable_count(&self) -> usize {
        self.records.iter().filter(|r| r.label == StabilityLabel::Unstable).count()
    }

    /// Checks every record's grids against the config.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let (ig, tg) = (self.config.input_grid(), self.config.target_grid());
        for r in &self.records {
            if r.input.len() != ig.len || r.input.omega.len() != ig.len {
                return Err(DatagenError::WindowLength { expected: ig.len, got: r.input.len() });
            }
            if r.target.len() != tg.len || r.target.omega.len() != tg.len {
                return Err(DatagenError::WindowLength { expected: tg.len, got: r.target.len() });
            }
            if r.input.t0 != ig.t0 || r.target.t0 != tg.t0 || r.input.dt != self.config.dt || r.target.dt != self.config.dt {
                return Err(DatagenError::Consistency(String::from("record grid does not match config")));
            }
        }
        Ok(())
    }

    pub fn normalized(&self, stats: &NormalizationStats) -> Result<Vec<NormalizedRecord>, DatagenError> {
        self.records.iter().map(|r| normalize(r, stats)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDatasets {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds the three splits from already generated records.
pub fn assemble(
    config: &SamplingConfig,
    train: Vec<TrajectoryRecord>,
    val: Vec<TrajectoryRecord>,
    test: Vec<TrajectoryRecord>,
) -> Result<SplitDatasets, DatagenError> {
    let stats = if train.is_empty() { None } else { Some(compute_stats(&train)?) };
    let mk = |split, records| Dataset { config: config.clone(), split, stats, records };
    Ok(SplitDatasets { train: mk(Split::Train, train), val: mk(Split::Val, val), test: mk(Split::Test, test) })
}

/// Generates every split sequentially.
pub fn build_dataset(config: &SamplingConfig) -> Result<SplitDatasets, DatagenError> {
    config.validate()?;
    let gen = |split: Split| -> Result<Vec<TrajectoryRecord>, DatagenError> {
        (0..config.split_size(split)).map(|i| generate_record(config, split, i)).collect()
    };
    assemble(config, gen(Split::Train)?, gen(Split::Val)?, gen(Split::Test)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small(n_train: usize, frac: f64) -> SamplingConfig {
        SamplingConfig { n_train, n_val: 3, n_test: 2, unstable_fraction: frac, seed: 11, ..Default::default() }
    }

    #[test]
    fn default_grids() {
        let c = SamplingConfig::default();
        assert_eq!(c.input_grid().len, 3);
        assert_eq!(c.target_grid().len, 29);
        let f = SamplingConfig { dt: 5e-5, ..Default::default() };
        assert_eq!(f.input_grid().len, 4001);
        assert_eq!(f.target_grid().len, 56001);
        c.validate().unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = [
            SamplingConfig { dt: 0.07, ..Default::default() },
            SamplingConfig { unstable_fraction: 1.5, ..Default::default() },
            SamplingConfig { pm_range: [1.0, 0.5], ..Default::default() },
            SamplingConfig { pm_range: [0.0, 2.5], ..Default::default() },
            SamplingConfig { target_window: [0.1, 3.1], ..Default::default() },
            SamplingConfig { dt: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(DatagenError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn undisturbed_record_is_constant() {
        let c = SamplingConfig::default();
        let p = c.machine.params(0.05, 0.7, 0.7).unwrap();
        let (label, input, target) = simulate_record(&c, p).unwrap();
        assert_eq!(label, StabilityLabel::Stable);
        let d0 = p.initial_state().unwrap().delta;
        for d in input.delta.iter().chain(&target.delta) {
            assert!((d - d0).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_sampling_is_deterministic() {
        let c = SamplingConfig::default();
        let a = sample_stable(&mut rng::stream(&[42]), &c).unwrap();
        let b = sample_stable(&mut rng::stream(&[42]), &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label, StabilityLabel::Stable);
    }

    #[test]
    fn stable_pm_draws_have_the_uniform_mean() {
        let c = SamplingConfig::default();
        let mut r = rng::stream(&[5]);
        let n = 1000;
        let mean: f64 = (0..n).map(|_| draw_machine(&mut r, &c).unwrap().pm()).sum::<f64>() / n as f64;
        let se = 2.0 / libm::sqrt(12.0 * n as f64);
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn unstable_sampling() {
        let c = SamplingConfig::default();
        for s in 0..4u64 {
            let rec = sample_unstable(&mut rng::stream(&[s]), &c).unwrap();
            assert_eq!(rec.label, StabilityLabel::Unstable);
            assert!(rec.params.pm1() <= rec.params.max_power());
            assert!(rec.params.pm1() >= smib::pm1_max(&rec.params).unwrap() - 1e-6);
        }
        let a = sample_unstable(&mut rng::stream(&[9]), &c).unwrap();
        let b = sample_unstable(&mut rng::stream(&[9]), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undamped_unstable_records_sit_above_equal_area_threshold() {
        let c = SamplingConfig { d_range: [0.0, 0.0], ..Default::default() };
        for s in 0..4u64 {
            let rec = sample_unstable(&mut rng::stream(&[100 + s]), &c).unwrap();
            assert!(rec.params.pm1() >= smib::pm1_max(&rec.params).unwrap() - 1e-6);
        }
    }

    #[test]
    fn impossible_unstable_config_errors() {
        // heavy damping and light loading: Pm1 = Pmax never slips within the horizon
        let c = SamplingConfig {
            pm_range: [1.9, 1.9],
            d_range: [50.0, 50.0],
            target_window: [0.3, 0.5],
            ..Default::default()
        };
        let err = sample_unstable(&mut rng::stream(&[1]), &c).unwrap_err();
        assert!(matches!(err, DatagenError::Config(_)), "{err:?}");
    }

    #[test]
    fn split_label_counts() {
        let d = build_dataset(&small(10, 0.2)).unwrap();
        assert_eq!(d.train.unstable_count(), 2);
        assert_eq!(d.val.unstable_count(), 1);
        assert_eq!(d.test.unstable_count(), 0);
        d.train.validate().unwrap();
        let d0 = build_dataset(&small(6, 0.0)).unwrap();
        assert_eq!(d0.train.unstable_count(), 0);
    }

    #[test]
    fn stats_depend_only_on_training_split() {
        let a = build_dataset(&small(6, 0.0)).unwrap();
        let b = build_dataset(&SamplingConfig { n_val: 5, n_test: 0, ..small(6, 0.0) }).unwrap();
        assert_eq!(a.train.stats, b.train.stats);
        assert_eq!(a.val.stats, a.train.stats);
        assert_eq!(a.train.records, b.train.records);
    }

    #[test]
    fn test_records_do_not_depend_on_other_split_sizes() {
        let a = build_dataset(&small(6, 0.0)).unwrap();
        let b = build_dataset(&SamplingConfig { n_train: 0, n_val: 0, ..small(6, 0.0) }).unwrap();
        assert_eq!(a.test.records, b.test.records);
        assert!(b.train.stats.is_none());
    }

    #[test]
    fn normalization_endpoints_and_round_trip() {
        let stats = NormalizationStats::new(0.1, PI, 4.0).unwrap();
        assert_eq!(stats.norm_delta(0.1), 0.0);
        assert_eq!(stats.norm_delta(PI), 1.0);
        assert_eq!(stats.norm_delta(7.0), 1.0);
        assert_eq!(stats.norm_omega(-4.0), -1.0);

        let d = build_dataset(&small(4, 0.5)).unwrap();
        let s = d.train.stats.unwrap();
        for r in &d.train.records {
            let n = normalize(r, &s).unwrap();
            let back = denormalize(&n.target, &s).unwrap();
            for (a, b) in back.delta.iter().zip(&r.target.delta) {
                assert!((a - b.min(PI)).abs() < 1e-12);
            }
            for (a, b) in back.omega.iter().zip(&r.target.omega) {
                assert!((a - b).abs() < 1e-12);
            }
            for v in n.input.values.iter().chain(&n.target.values) {
                assert!(v[0] >= -1e-12 && v[0] <= 1.0 + 1e-12);
                assert!(v[1].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_stats_are_rejected() {
        assert!(NormalizationStats::new(1.0, 1.0, 1.0).is_err());
        assert!(NormalizationStats::new(0.0, 1.0, 0.0).is_err());
        let bad = NormalizationStats { delta_min: 0.0, delta_max: 0.0, omega_absmax: 1.0 };
        let w = Window { t0: 0.0, dt: 0.1, values: vec![[0.0, 0.0]] };
        assert_eq!(denormalize(&w, &bad), Err(DatagenError::DegenerateStats));
    }

    #[test]
    fn window_interpolation() {
        let w = Window { t0: 0.0, dt: 0.1, values: vec![[0.0, 1.0], [1.0, 3.0], [3.0, 3.0]] };
        assert_eq!(w.interpolate(0.0), [0.0, 1.0]);
        let m = w.interpolate(0.05);
        assert!((m[0] - 0.5).abs() < 1e-12 && (m[1] - 2.0).abs() < 1e-12);
        assert_eq!(w.interpolate(0.2), [3.0, 3.0]);
        assert_eq!(w.interpolate(0.5), [3.0, 3.0]);
    }
}
