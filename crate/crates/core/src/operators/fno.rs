//! Fourier neural operator on the query grid.
//!
//! The input is an `n`-point, 3-channel signal: the input window's `δ'` and
//! `ω'` stretched by linear interpolation onto `n` uniform points, and the
//! scaled query time. Changing `n` changes the discretization only.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::mlp;
use super::{scaled_time, OperatorError};
use crate::datagen::Window;
use crate::numcore::{Activation, Graph, Init, ParamSpec, Tensor, Var};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FnoConfig {
    pub width: usize,
    pub layers: usize,
    pub modes: usize,
    pub activation: Activation,
    pub projection_hidden: Vec<usize>,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self { width: 80, layers: 4, modes: 14, activation: Activation::Gelu, projection_hidden: vec![128] }
    }
}

pub const INPUT_CHANNELS: usize = 3;

pub(crate) fn spectral_name(l: usize) -> String {
    format!("block.{l}.spectral")
}

impl FnoConfig {
    pub fn lift_dims(&self) -> Vec<usize> {
        vec![INPUT_CHANNELS, self.width]
    }

    pub fn projection_dims(&self) -> Vec<usize> {
        mlp::dims(self.width, &self.projection_hidden, 2)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.width;
        let mut s = mlp::specs("lift", &self.lift_dims());
        for l in 0..self.layers {
            s.push(ParamSpec::new(&spectral_name(l), &[self.modes, w, w, 2], Init::Spectral { fan_in: w }));
            s.push(ParamSpec::new(&format!("block.{l}.w"), &[w, w], Init::Glorot { fan_in: w, fan_out: w }));
            s.push(ParamSpec::new(&format!("block.{l}.b"), &[w], Init::Zeros));
        }
        s.extend(mlp::specs("proj", &self.projection_dims()));
        s
    }

    pub fn count(&self) -> usize {
        let w = self.width;
        mlp::count(&self.lift_dims()) + self.layers * (self.modes * w * w * 2 + w * w + w) + mlp::count(&self.projection_dims())
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.width == 0 || self.modes == 0 || self.projection_hidden.contains(&0) {
            return Err(OperatorError::Config(String::from("fno needs non-zero width, modes and projection widths")));
        }
        Ok(())
    }
}

/// One Fourier layer: `act(irfft(W · rfft(x)) + x·V + c)` with the spectrum
/// truncated to `min(modes, n/2 + 1)` modes.
pub fn spectral_block(
    g: &mut Graph,
    x: Var,
    spectral: Var,
    bypass_w: Var,
    bypass_b: Var,
    modes: usize,
    act: Activation,
) -> Result<Var, OperatorError> {
    let n = g.value(x).shape()[1];
    let m = modes.min(n / 2 + 1);
    let f = g.rfft(x, m)?;
    let y = g.mode_mul(f, spectral)?;
    let s = g.irfft(y, n)?;
    let byp = g.affine(x, bypass_w, bypass_b)?;
    let z = g.add(s, byp)?;
    Ok(g.act(z, act))
}

/// `[B, n, 3]` input signal for the given query times.
pub fn input_signal(inputs: &[&Window], times: &[f64]) -> Result<Tensor, OperatorError> {
    let n = times.len();
    if n < 2 {
        return Err(OperatorError::GridTooShort { n });
    }
    let mut data = Vec::with_capacity(inputs.len() * n * INPUT_CHANNELS);
    for w in inputs {
        if w.is_empty() {
            return Err(OperatorError::EmptyInput);
        }
        let span = (w.len() - 1) as f64 * w.dt;
        for (j, t) in times.iter().enumerate() {
            let v = w.interpolate(w.t0 + span * j as f64 / (n - 1) as f64);
            data.extend_from_slice(&[v[0], v[1], scaled_time(*t)]);
        }
    }
    Ok(Tensor::new(vec![inputs.len(), n, INPUT_CHANNELS], data)?)
}

fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var, OperatorError> {
    vars.get(name).copied().ok_or_else(|| OperatorError::MissingParam(String::from(name)))
}

pub(crate) fn forward(
    cfg: &FnoConfig,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    inputs: &[&Window],
    times: &[f64],
) -> Result<Var, OperatorError> {
    let x = g.constant(input_signal(inputs, times)?);
    let mut h = mlp::tape(g, vars, "lift", 1, x, Activation::Identity)?;
    for l in 0..cfg.layers {
        let sw = lookup(vars, &spectral_name(l))?;
        let bw = lookup(vars, &format!("block.{l}.w"))?;
        let bb = lookup(vars, &format!("block.{l}.b"))?;
        h = spectral_block(g, h, sw, bw, bb, cfg.modes, cfg.activation)?;
    }
    mlp::tape(g, vars, "proj", cfg.projection_dims().len() - 1, h, cfg.activation)
}
