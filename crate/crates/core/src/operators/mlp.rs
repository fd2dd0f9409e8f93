//! Dense stacks: activation after every layer but the last.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::OperatorError;
use crate::numcore::{matmul_rows, Activation, Graph, Init, ParamSet, ParamSpec, Var};

pub(crate) fn weight_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.{i}.w")
}

pub(crate) fn bias_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.{i}.b")
}

/// Layer sizes `[input, hidden.., output]`.
pub(crate) fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

pub(crate) fn specs(prefix: &str, dims: &[usize]) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        out.push(ParamSpec::new(&weight_name(prefix, i), &[w[0], w[1]], Init::Glorot { fan_in: w[0], fan_out: w[1] }));
        out.push(ParamSpec::new(&bias_name(prefix, i), &[w[1]], Init::Zeros));
    }
    out
}

fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var, OperatorError> {
    vars.get(name).copied().ok_or_else(|| OperatorError::MissingParam(String::from(name)))
}

pub(crate) fn tape(
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    prefix: &str,
    layers: usize,
    x: Var,
    act: Activation,
) -> Result<Var, OperatorError> {
    let mut h = x;
    for i in 0..layers {
        let w = lookup(vars, &weight_name(prefix, i))?;
        let b = lookup(vars, &bias_name(prefix, i))?;
        h = g.affine(h, w, b)?;
        if i + 1 < layers {
            h = g.act(h, act);
        }
    }
    Ok(h)
}

#[derive(Clone, Copy)]
pub(crate) struct Layer<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Tape-free stack used inside solver loops.
pub(crate) struct Plain<'a> {
    pub layers: Vec<Layer<'a>>,
    pub act: Activation,
}

/// Per-layer inputs and pre-activations from [`Plain::forward_cached`].
pub(crate) struct Cache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    rows: usize,
}

impl<'a> Plain<'a> {
    pub fn from_params(params: &'a ParamSet, prefix: &str, dims: &[usize], act: Activation) -> Result<Self, OperatorError> {
        let mut layers = Vec::new();
        for (i, d) in dims.windows(2).enumerate() {
            let wn = weight_name(prefix, i);
            let bn = bias_name(prefix, i);
            let w = params.get(&wn).ok_or(OperatorError::MissingParam(wn))?;
            let b = params.get(&bn).ok_or(OperatorError::MissingParam(bn))?;
            layers.push(Layer { w: w.data(), b: b.data(), fan_in: d[0], fan_out: d[1] });
        }
        Ok(Self { layers, act })
    }

    fn layer_out(l: &Layer<'_>, x: &[f64]) -> Vec<f64> {
        let mut y = matmul_rows(x, l.w, l.fan_in, l.fan_out);
        for row in y.chunks_mut(l.fan_out) {
            for (o, b) in row.iter_mut().zip(l.b) {
                *o += b;
            }
        }
        y
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            h = Self::layer_out(l, &h);
            if i < last {
                for v in &mut h {
                    *v = self.act.apply(*v);
                }
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &[f64], rows: usize) -> (Vec<f64>, Cache) {
        let mut cache = Cache { inputs: Vec::new(), pre: Vec::new(), rows };
        let mut h = x.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            let pre = Self::layer_out(l, &h);
            cache.inputs.push(h);
            h = if i < last { pre.iter().map(|v| self.act.apply(*v)).collect() } else { pre.clone() };
            cache.pre.push(pre);
        }
        (h, cache)
    }

    /// Accumulates parameter cotangents into `grads` (two slots per layer,
    /// weight then bias) and returns the input cotangent.
    pub fn vjp(&self, cache: &Cache, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let rows = cache.rows;
        let mut g = grad_out.to_vec();
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate().rev() {
            if i < last {
                for (gv, pre) in g.iter_mut().zip(&cache.pre[i]) {
                    let y = self.act.apply(*pre);
                    *gv *= self.act.derivative(*pre, y);
                }
            }
            let (k, n) = (l.fan_in, l.fan_out);
            let x = &cache.inputs[i];
            let (gw, rest) = grads[2 * i..2 * i + 2].split_at_mut(1);
            let (gw, gb) = (&mut gw[0], &mut rest[0]);
            for r in 0..rows {
                let grow = &g[r * n..(r + 1) * n];
                for (d, v) in gb.iter_mut().zip(grow) {
                    *d += v;
                }
                for kk in 0..k {
                    let a = x[r * k + kk];
                    if a == 0.0 {
                        continue;
                    }
                    for (d, v) in gw[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                        *d += a * v;
                    }
                }
            }
            let mut gx = vec![0.0; rows * k];
            for r in 0..rows {
                let grow = &g[r * n..(r + 1) * n];
                for kk in 0..k {
                    let wrow = &l.w[kk * n..(kk + 1) * n];
                    gx[r * k + kk] = grow.iter().zip(wrow).map(|(p, q)| p * q).sum();
                }
            }
            g = gx;
        }
        g
    }
}

/// Exact scalar count of a stack with the given sizes.
pub(crate) fn count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
