//! Branch/trunk operator network.
//!
//! The branch sees the input window at fixed sensor times; the trunk sees
//! the scaled query time. Channel `c` at time `t` is
//! `Σ_k b[c·p + k]·τ_k(t) + bias[c]`, so each query time is evaluated
//! independently of the others.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::mlp;
use super::{scaled_time, sensor_tensor, OperatorError};
use crate::datagen::Window;
use crate::numcore::{Activation, Graph, Init, ParamSpec, Tensor, Var};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepONetConfig {
    pub sensor_times: Vec<f64>,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Basis size `p`; the branch emits `2p` coefficients.
    pub basis: usize,
    pub activation: Activation,
}

impl Default for DeepONetConfig {
    fn default() -> Self {
        Self {
            sensor_times: vec![0.0, 0.1, 0.2],
            branch_hidden: vec![512, 512],
            trunk_hidden: vec![512, 512],
            basis: 128,
            activation: Activation::Tanh,
        }
    }
}

impl DeepONetConfig {
    pub fn branch_dims(&self) -> Vec<usize> {
        mlp::dims(2 * self.sensor_times.len(), &self.branch_hidden, 2 * self.basis)
    }

    pub fn trunk_dims(&self) -> Vec<usize> {
        mlp::dims(1, &self.trunk_hidden, self.basis)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = mlp::specs("branch", &self.branch_dims());
        s.extend(mlp::specs("trunk", &self.trunk_dims()));
        s.push(ParamSpec::new("bias", &[2], Init::Zeros));
        s
    }

    pub fn count(&self) -> usize {
        mlp::count(&self.branch_dims()) + mlp::count(&self.trunk_dims()) + 2
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.sensor_times.is_empty() || self.basis == 0 || self.branch_hidden.iter().chain(&self.trunk_hidden).any(|w| *w == 0) {
            return Err(OperatorError::Config(String::from("deeponet needs sensors, a basis and non-zero widths")));
        }
        Ok(())
    }
}

pub(crate) fn forward(
    cfg: &DeepONetConfig,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    inputs: &[&Window],
    times: &[f64],
) -> Result<Var, OperatorError> {
    let (batch, n, p) = (inputs.len(), times.len(), cfg.basis);
    let x = g.constant(sensor_tensor(inputs, &cfg.sensor_times)?);
    let b = mlp::tape(g, vars, "branch", cfg.branch_dims().len() - 1, x, cfg.activation)?;
    let b = g.reshape(b, &[batch * 2, p])?;
    let s = g.constant(Tensor::new(vec![n, 1], times.iter().map(|t| scaled_time(*t)).collect())?);
    let tr = mlp::tape(g, vars, "trunk", cfg.trunk_dims().len() - 1, s, cfg.activation)?;
    let o = g.matmul_nt(tr, b)?;
    let o = g.reshape(o, &[n, batch, 2])?;
    let o = g.swap01(o)?;
    let bias = vars.get("bias").copied().ok_or_else(|| OperatorError::MissingParam(String::from("bias")))?;
    Ok(g.add_bias(o, bias)?)
}
