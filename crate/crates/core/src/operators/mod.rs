//! Operator surrogates `G`: normalized input window on `[0, τ]` →
//! normalized `(δ', ω')` at arbitrary query times in the target window.
//!
//! All three architectures share one entry point, [`ModelConfig::forward`],
//! which records the computation on a [`Graph`] for training, and
//! [`Model::predict`] for inference. Query grids may have any resolution.

pub mod deeponet;
pub mod fno;
pub mod lnode;
mod mlp;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use deeponet::DeepONetConfig;
pub use fno::FnoConfig;
pub use lnode::{LnodeConfig, LnodeSolver};

use crate::datagen::{NormalizationStats, Window};
use crate::numcore::{init_params, Graph, NumError, ParamSet, ParamSpec, Tensor, Var};
use crate::ode::OdeError;
use crate::smib::SampleGrid;

pub const QUERY_START: f64 = 0.3;
pub const QUERY_END: f64 = 3.1;
const WINDOW_SLACK: f64 = 1e-9;
/// Query times per tape when predicting on long grids.
const PREDICT_CHUNK: usize = 4096;

/// Time coordinate seen by the networks: 0 at the start of the target
/// window, 1 at its end.
pub fn scaled_time(t: f64) -> f64 {
    (t - QUERY_START) / (QUERY_END - QUERY_START)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OperatorError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("latent solver: {0}")]
    Ode(#[from] OdeError),
    #[error("query time {t} outside [{QUERY_START}, {QUERY_END}]")]
    QueryOutsideWindow { t: f64 },
    #[error("query times must be finite and increasing")]
    UnorderedQueries,
    #[error("query grid has {n} points; at least 2 required")]
    GridTooShort { n: usize },
    #[error("empty batch or empty input window")]
    EmptyInput,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter set does not match the model: {0}")]
    ParamMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[serde(rename = "deeponet")]
    DeepONet,
    Fno,
    LnodeFixed,
    LnodeAdaptive,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::DeepONet, ModelKind::Fno, ModelKind::LnodeFixed, ModelKind::LnodeAdaptive];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DeepONet => "deeponet",
            ModelKind::Fno => "fno",
            ModelKind::LnodeFixed => "lnode-fixed",
            ModelKind::LnodeAdaptive => "lnode-adaptive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Default training epochs.
    pub fn default_epochs(self) -> usize {
        match self {
            ModelKind::DeepONet => 600,
            _ => 60,
        }
    }
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    #[serde(rename = "deeponet")]
    DeepONet(DeepONetConfig),
    Fno(FnoConfig),
    Lnode(LnodeConfig),
}

/// Parameter budget of the reference configurations.
pub const PARAM_BUDGET: usize = 700_000;

/// Whether `count` lies within ±10% of [`PARAM_BUDGET`].
pub fn within_budget(count: usize) -> bool {
    let c = count as f64;
    let b = PARAM_BUDGET as f64;
    c >= 0.9 * b && c <= 1.1 * b
}

impl ModelConfig {
    /// Reference configuration sized to the parameter budget.
    pub fn reference(kind: ModelKind) -> Self {
        match kind {
            ModelKind::DeepONet => ModelConfig::DeepONet(DeepONetConfig::default()),
            ModelKind::Fno => ModelConfig::Fno(FnoConfig::default()),
            ModelKind::LnodeFixed => ModelConfig::Lnode(LnodeConfig::default()),
            ModelKind::LnodeAdaptive => ModelConfig::Lnode(LnodeConfig { solver: LnodeSolver::AdaptiveDopri, ..Default::default() }),
        }
    }

    /// A configuration with every width at most 8.
    pub fn tiny(kind: ModelKind) -> Self {
        match kind {
            ModelKind::DeepONet => {
                ModelConfig::DeepONet(DeepONetConfig { branch_hidden: alloc::vec![8], trunk_hidden: alloc::vec![8], basis: 4, ..Default::default() })
            }
            ModelKind::Fno => ModelConfig::Fno(FnoConfig { width: 6, layers: 2, modes: 4, projection_hidden: alloc::vec![8], ..Default::default() }),
            ModelKind::LnodeFixed | ModelKind::LnodeAdaptive => {
                let solver = if kind == ModelKind::LnodeFixed { LnodeSolver::FixedAdams } else { LnodeSolver::AdaptiveDopri };
                ModelConfig::Lnode(LnodeConfig {
                    encoder_hidden: alloc::vec![8],
                    latent: 4,
                    dynamics_hidden: alloc::vec![8],
                    decoder_hidden: alloc::vec![8],
                    solver,
                    ..Default::default()
                })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::DeepONet(_) => ModelKind::DeepONet,
            ModelConfig::Fno(_) => ModelKind::Fno,
            ModelConfig::Lnode(c) => match c.solver {
                LnodeSolver::FixedAdams => ModelKind::LnodeFixed,
                LnodeSolver::AdaptiveDopri => ModelKind::LnodeAdaptive,
            },
        }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        match self {
            ModelConfig::DeepONet(c) => c.validate(),
            ModelConfig::Fno(c) => c.validate(),
            ModelConfig::Lnode(c) => c.validate(),
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            ModelConfig::DeepONet(c) => c.param_specs(),
            ModelConfig::Fno(c) => c.param_specs(),
            ModelConfig::Lnode(c) => c.param_specs(),
        }
    }

    /// Records the prediction `[B, n, 2]` for `inputs` at `times` on `g`.
    pub fn forward(&self, g: &mut Graph, vars: &BTreeMap<String, Var>, inputs: &[&Window], times: &[f64]) -> Result<Var, OperatorError> {
        check_times(times)?;
        if inputs.is_empty() {
            return Err(OperatorError::EmptyInput);
        }
        match self {
            ModelConfig::DeepONet(c) => deeponet::forward(c, g, vars, inputs, times),
            ModelConfig::Fno(c) => fno::forward(c, g, vars, inputs, times),
            ModelConfig::Lnode(c) => lnode::forward(c, g, vars, inputs, times),
        }
    }
}

/// Exact number of trainable scalars.
pub fn count_params(config: &ModelConfig) -> usize {
    match config {
        ModelConfig::DeepONet(c) => c.count(),
        ModelConfig::Fno(c) => c.count(),
        ModelConfig::Lnode(c) => c.count(),
    }
}

fn check_times(times: &[f64]) -> Result<(), OperatorError> {
    if times.is_empty() {
        return Err(OperatorError::GridTooShort { n: 0 });
    }
    for &t in times {
        if !(t >= QUERY_START - WINDOW_SLACK && t <= QUERY_END + WINDOW_SLACK) {
            return Err(OperatorError::QueryOutsideWindow { t });
        }
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OperatorError::UnorderedQueries);
    }
    Ok(())
}

/// `[B, 2S]` sensor values: `(δ', ω')` of each input at each sensor time.
pub(crate) fn sensor_tensor(inputs: &[&Window], sensor_times: &[f64]) -> Result<Tensor, OperatorError> {
    if inputs.is_empty() || inputs.iter().any(|w| w.is_empty()) {
        return Err(OperatorError::EmptyInput);
    }
    let mut data = Vec::with_capacity(inputs.len() * 2 * sensor_times.len());
    for w in inputs {
        for &s in sensor_times {
            data.extend_from_slice(&w.interpolate(s));
        }
    }
    Ok(Tensor::new(alloc::vec![inputs.len(), 2 * sensor_times.len()], data)?)
}

/// A trained (or freshly initialized) operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Statistics of the training split the model was fitted on.
    pub norm_stats: NormalizationStats,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64, norm_stats: NormalizationStats) -> Result<Self, OperatorError> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed);
        Ok(Self { config, params, norm_stats })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamSet, norm_stats: NormalizationStats) -> Result<Self, OperatorError> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(OperatorError::ParamMismatch(format!("expected {} tensors, got {}", specs.len(), params.len())));
        }
        for s in &specs {
            match params.get(&s.name) {
                Some(t) if t.shape() == s.shape.as_slice() => {}
                Some(t) => return Err(OperatorError::ParamMismatch(format!("{}: shape {:?}, expected {:?}", s.name, t.shape(), s.shape))),
                None => return Err(OperatorError::MissingParam(s.name.clone())),
            }
        }
        Ok(Self { config, params, norm_stats })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn tape_values(&self, inputs: &[&Window], times: &[f64]) -> Result<Vec<f64>, OperatorError> {
        let mut g = Graph::new();
        let vars = g.params_from(&self.params, false);
        let y = self.config.forward(&mut g, &vars, inputs, times)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Normalized predictions, one window per input, on `grid`.
    ///
    /// Long grids are processed in pieces where the architecture evaluates
    /// query times independently; the result does not depend on the split.
    pub fn predict(&self, inputs: &[&Window], grid: SampleGrid) -> Result<Vec<Window>, OperatorError> {
        let times = grid.times();
        check_times(&times)?;
        if inputs.is_empty() {
            return Err(OperatorError::EmptyInput);
        }
        let (b, n) = (inputs.len(), times.len());
        // flat [B, n, 2]
        let flat = match &self.config {
            ModelConfig::DeepONet(_) => {
                let mut out = alloc::vec![0.0; b * n * 2];
                let mut start = 0;
                for chunk in times.chunks(PREDICT_CHUNK) {
                    let part = self.tape_values(inputs, chunk)?;
                    let len = chunk.len();
                    for s in 0..b {
                        out[(s * n + start) * 2..(s * n + start + len) * 2].copy_from_slice(&part[s * len * 2..(s + 1) * len * 2]);
                    }
                    start += len;
                }
                out
            }
            ModelConfig::Fno(_) => {
                if n > PREDICT_CHUNK {
                    let mut out = Vec::with_capacity(b * n * 2);
                    for w in inputs {
                        out.extend(self.tape_values(&[*w], &times)?);
                    }
                    out
                } else {
                    self.tape_values(inputs, &times)?
                }
            }
            ModelConfig::Lnode(c) => lnode::predict(c, &self.params, inputs, &times, PREDICT_CHUNK)?,
        };
        Ok(flat
            .chunks(n * 2)
            .map(|s| Window { t0: grid.t0, dt: grid.dt, values: s.chunks(2).map(|v| [v[0], v[1]]).collect() })
            .collect())
    }
}
