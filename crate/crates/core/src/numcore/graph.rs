//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its computed value. `backward`
//! walks the tape in reverse and accumulates cotangents, so gradients are
//! those of the discrete computation that was actually executed.
//!
//! Matrix products treat all leading axes of the left operand as rows,
//! which is how the pointwise layers of the operator models are applied
//! to `[batch, time, channel]` signals.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::fft::{self, TwiddleTable};
use super::{shape_err, NumError, ParamSet, Tensor};
use crate::math::{erf, exp, sqrt, tanh};
use num_complex::Complex64;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tanh(x),
            Activation::Gelu => 0.5 * x * (1.0 + erf(x * core::f64::consts::FRAC_1_SQRT_2)),
        }
    }

    /// Derivative from the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + erf(x * core::f64::consts::FRAC_1_SQRT_2));
                let pdf = exp(-0.5 * x * x) / sqrt(2.0 * crate::math::PI);
                cdf + x * pdf
            }
        }
    }
}

/// An operation whose forward value is computed by the caller and whose
/// vector-Jacobian product is supplied here.
pub trait CustomOp {
    /// Cotangents for each input, given the output cotangent. `None` marks
    /// an input that receives no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddBias(Var, Var),
    Act(Var, Activation),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Swap01(Var),
    Rfft { x: Var, modes: usize },
    Irfft { x: Var, n: usize },
    ModeMul(Var, Var),
    H1 { pred: Var, target: Tensor, dt: f64, eps: f64 },
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node cotangents produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    twiddles: Vec<TwiddleTable>,
}

fn check(cond: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<(), NumError> {
    if cond {
        Ok(())
    } else {
        Err(shape_err(op, detail()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf registered under `name`.
    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.push((String::from(name), v));
        v
    }

    /// Registers every parameter of `set`, either as differentiable leaves
    /// or as constants.
    pub fn params_from(&mut self, set: &ParamSet, trainable: bool) -> BTreeMap<String, Var> {
        let mut out = BTreeMap::new();
        for (name, t) in set.iter() {
            let v = if trainable { self.param(name, t.clone()) } else { self.constant(t.clone()) };
            out.insert(name.clone(), v);
        }
        out
    }

    /// `x [.., k] · w [k, n] -> [.., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, NumError> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        check(ws.len() == 2 && !xs.is_empty() && xs[xs.len() - 1] == ws[0], "matmul", || format!("{xs:?} x {ws:?}"))?;
        let (k, n) = (ws[0], ws[1]);
        let out = matmul_rows(self.value(x).data(), self.value(w).data(), k, n);
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = n;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(x, w), ng))
    }

    /// `a [m, k] · b [n, k]ᵀ -> [m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (as_, bs) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        check(as_.len() == 2 && bs.len() == 2 && as_[1] == bs[1], "matmul_nt", || format!("{as_:?} x {bs:?}ᵀ"))?;
        let (m, k, n) = (as_[0], as_[1], bs[0]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(p, q)| p * q).sum();
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT(a, b), ng))
    }

    /// Adds `b [n]` to every row of `x [.., n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumError> {
        let n = self.value(x).last_dim();
        let bs = self.value(b).shape().to_vec();
        check(bs == [n], "add_bias", || format!("{:?} + {bs:?}", self.value(x).shape()))?;
        let mut out = self.value(x).clone();
        let bv = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBias(x, b), ng))
    }

    /// `x · w + b` over the trailing axis.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = kind.apply(*v);
        }
        let ng = self.needs(x);
        self.push(out, Op::Act(x, kind), ng)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool), NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(ta.same_shape(tb), name, || format!("{:?} vs {:?}", ta.shape(), tb.shape()))?;
        let mut out = ta.clone();
        for (o, q) in out.data_mut().iter_mut().zip(tb.data()) {
            *o = f(*o, *q);
        }
        Ok((out, self.needs(a) || self.needs(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, ng) = self.binary(a, b, "add", |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, ng) = self.binary(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (t, ng) = self.binary(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= c;
        }
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Concatenates along the trailing axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        check(!parts.is_empty(), "concat", || String::from("no inputs"))?;
        let lead = {
            let s = self.value(parts[0]).shape();
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let rows = self.value(parts[0]).rows();
        let mut width = 0;
        for p in parts {
            let s = self.value(*p).shape();
            check(s.len() == lead.len() + 1 && s[..lead.len()] == lead[..], "concat", || format!("{s:?} vs lead {lead:?}"))?;
            width += s[s.len() - 1];
        }
        let mut out = vec![0.0; rows * width];
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            let w = t.last_dim();
            for r in 0..rows {
                out[r * width + off..r * width + off + w].copy_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(width);
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), ng))
    }

    /// Columns `start..start + len` of the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let t = self.value(x);
        let w = t.last_dim();
        check(start + len <= w, "slice_last", || format!("{start}+{len} > {w}"))?;
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice(x, start, len), ng))
    }

    /// `[a, b, c] -> [b, a, c]`.
    pub fn swap01(&mut self, x: Var) -> Result<Var, NumError> {
        let s = self.value(x).shape().to_vec();
        check(s.len() == 3, "swap01", || format!("{s:?}"))?;
        let out = swap01_data(self.value(x).data(), s[0], s[1], s[2]);
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(vec![s[1], s[0], s[2]], out)?, Op::Swap01(x), ng))
    }

    fn twiddle(&mut self, n: usize) -> usize {
        if let Some(i) = self.twiddles.iter().position(|t| t.n() == n) {
            return i;
        }
        self.twiddles.push(TwiddleTable::new(n));
        self.twiddles.len() - 1
    }

    /// Lowest `modes` Fourier coefficients along axis 1 of `x [B, n, C]`,
    /// as `[B, modes, C, 2]` (real, imaginary).
    pub fn rfft(&mut self, x: Var, modes: usize) -> Result<Var, NumError> {
        let s = self.value(x).shape().to_vec();
        check(s.len() == 3 && s[1] >= 2, "rfft", || format!("{s:?}"))?;
        let (b, n, c) = (s[0], s[1], s[2]);
        check(modes >= 1 && modes <= n / 2 + 1, "rfft", || format!("{modes} modes for n = {n}"))?;
        let ti = self.twiddle(n);
        let out = rfft_forward(self.value(x).data(), b, n, c, modes, &self.twiddles[ti]);
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(vec![b, modes, c, 2], out)?, Op::Rfft { x, modes }, ng))
    }

    /// Real signal of length `n` from `[B, m, C, 2]` low modes (others zero).
    pub fn irfft(&mut self, x: Var, n: usize) -> Result<Var, NumError> {
        let s = self.value(x).shape().to_vec();
        check(s.len() == 4 && s[3] == 2 && n >= 2 && s[1] <= n / 2 + 1, "irfft", || format!("{s:?} -> n = {n}"))?;
        let (b, m, c) = (s[0], s[1], s[2]);
        let ti = self.twiddle(n);
        let out = irfft_forward(self.value(x).data(), b, m, c, n, &self.twiddles[ti]);
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(vec![b, n, c], out)?, Op::Irfft { x, n }, ng))
    }

    /// Complex per-mode channel mixing:
    /// `x [B, m, Ci, 2]`, `w [M, Ci, Co, 2]` with `M >= m` -> `[B, m, Co, 2]`.
    pub fn mode_mul(&mut self, x: Var, w: Var) -> Result<Var, NumError> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        check(
            xs.len() == 4 && ws.len() == 4 && xs[3] == 2 && ws[3] == 2 && ws[0] >= xs[1] && ws[1] == xs[2],
            "mode_mul",
            || format!("{xs:?} * {ws:?}"),
        )?;
        let (b, m, ci, co) = (xs[0], xs[1], xs[2], ws[2]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; b * m * co * 2];
        for bb in 0..b {
            for k in 0..m {
                let ob = (bb * m + k) * co * 2;
                for i in 0..ci {
                    let xi = ((bb * m + k) * ci + i) * 2;
                    let (xr, xim) = (xv[xi], xv[xi + 1]);
                    let wb = (k * ci + i) * co * 2;
                    for o in 0..co {
                        let (wr, wi) = (wv[wb + 2 * o], wv[wb + 2 * o + 1]);
                        out[ob + 2 * o] += xr * wr - xim * wi;
                        out[ob + 2 * o + 1] += xr * wi + xim * wr;
                    }
                }
            }
        }
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(vec![b, m, co, 2], out)?, Op::ModeMul(x, w), ng))
    }

    /// Mean over batch and channel of the relative discrete H1 error of
    /// `pred [B, n, C]` against the constant `target`.
    pub fn h1_loss(&mut self, pred: Var, target: Tensor, dt: f64, eps: f64) -> Result<Var, NumError> {
        let ps = self.value(pred).shape().to_vec();
        check(ps.len() == 3 && ps == target.shape() && ps[1] >= 2, "h1_loss", || format!("{ps:?} vs {:?}", target.shape()))?;
        let (loss, _) = h1_terms(self.value(pred).data(), target.data(), ps[0], ps[1], ps[2], dt, eps, false);
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::H1 { pred, target, dt, eps }, ng))
    }

    /// Appends a node whose value was computed outside the tape.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|v| self.needs(*v));
        self.push(value, Op::Custom(inputs.to_vec(), op), ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradient for every registered parameter, zero where no path exists.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            out.insert(name.clone(), g);
        }
        out
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / k.max(1);
                if self.needs(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    for i in 0..rows {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let wrow = &wv.data()[kk * n..(kk + 1) * n];
                            dx[i * k + kk] = grow.iter().zip(wrow).map(|(p, q)| p * q).sum();
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; k * n];
                    for i in 0..rows {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let a = xv.data()[i * k + kk];
                            if a == 0.0 {
                                continue;
                            }
                            for (d, gg) in dw[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *d += a * gg;
                            }
                        }
                    }
                    acc(*w, Tensor::new(vec![k, n], dw).unwrap());
                }
            }
            Op::MatMulNT(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i * n + j];
                            for (d, q) in da[i * k..(i + 1) * k].iter_mut().zip(&bv.data()[j * k..(j + 1) * k]) {
                                *d += gij * q;
                            }
                        }
                    }
                    acc(*a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i * n + j];
                            for (d, p) in db[j * k..(j + 1) * k].iter_mut().zip(&av.data()[i * k..(i + 1) * k]) {
                                *d += gij * p;
                            }
                        }
                    }
                    acc(*b, Tensor::new(vec![n, k], db).unwrap());
                }
            }
            Op::Swap01(x) => {
                let s = self.value(*x).shape();
                let d = swap01_data(g.data(), s[1], s[0], s[2]);
                acc(*x, Tensor::new(s.to_vec(), d).unwrap());
            }
            Op::AddBias(x, b) => {
                if self.needs(*b) {
                    let n = g.last_dim();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::vector(db));
                }
                acc(*x, g.clone());
            }
            Op::Act(x, kind) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for ((d, xi), yi) in dx.data_mut().iter_mut().zip(xv.data()).zip(node.value.data()) {
                    *d *= kind.derivative(*xi, *yi);
                }
                acc(*x, dx);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut n = g.clone();
                for v in n.data_mut() {
                    *v = -*v;
                }
                acc(*b, n);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut d = g.clone();
                    for (x, y) in d.data_mut().iter_mut().zip(bv.data()) {
                        *x *= y;
                    }
                    acc(*a, d);
                }
                if self.needs(*b) {
                    let mut d = g.clone();
                    for (x, y) in d.data_mut().iter_mut().zip(av.data()) {
                        *x *= y;
                    }
                    acc(*b, d);
                }
            }
            Op::Scale(x, c) => {
                let mut d = g.clone();
                for v in d.data_mut() {
                    *v *= c;
                }
                acc(*x, d);
            }
            Op::Sum(x) => acc(*x, Tensor::filled(self.value(*x).shape(), g.item())),
            Op::Mean(x) => {
                let t = self.value(*x);
                acc(*x, Tensor::filled(t.shape(), g.item() / t.len().max(1) as f64));
            }
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.value(*x).shape()).unwrap()),
            Op::Concat(parts) => {
                let width = g.last_dim();
                let rows = g.rows();
                let mut off = 0;
                for p in parts {
                    let t = self.value(*p);
                    let w = t.last_dim();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * width + off..r * width + off + w]);
                        }
                        acc(*p, Tensor::new(t.shape().to_vec(), d).unwrap());
                    }
                    off += w;
                }
            }
            Op::Slice(x, start, len) => {
                let t = self.value(*x);
                let w = t.last_dim();
                let mut d = Tensor::zeros(t.shape());
                for r in 0..t.rows() {
                    d.data_mut()[r * w + start..r * w + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(*x, d);
            }
            Op::Rfft { x, modes } => {
                let s = self.value(*x).shape();
                let (b, n, c) = (s[0], s[1], s[2]);
                let tw = self.twiddles.iter().find(|t| t.n() == n).expect("twiddle table");
                let d = rfft_adjoint(g.data(), b, n, c, *modes, tw);
                acc(*x, Tensor::new(vec![b, n, c], d).unwrap());
            }
            Op::Irfft { x, n } => {
                let s = self.value(*x).shape();
                let (b, m, c) = (s[0], s[1], s[2]);
                let tw = self.twiddles.iter().find(|t| t.n() == *n).expect("twiddle table");
                let d = irfft_adjoint(g.data(), b, m, c, *n, tw);
                acc(*x, Tensor::new(vec![b, m, c, 2], d).unwrap());
            }
            Op::ModeMul(x, w) => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (b, m, ci) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let co = wv.shape()[2];
                let gd = g.data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    for bb in 0..b {
                        for k in 0..m {
                            let gb = (bb * m + k) * co * 2;
                            for i in 0..ci {
                                let wb = (k * ci + i) * co * 2;
                                let (mut dr, mut di) = (0.0, 0.0);
                                for o in 0..co {
                                    let (gr, gi) = (gd[gb + 2 * o], gd[gb + 2 * o + 1]);
                                    let (wr, wi) = (wv.data()[wb + 2 * o], wv.data()[wb + 2 * o + 1]);
                                    dr += gr * wr + gi * wi;
                                    di += -gr * wi + gi * wr;
                                }
                                let xi = ((bb * m + k) * ci + i) * 2;
                                dx[xi] = dr;
                                dx[xi + 1] = di;
                            }
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; wv.len()];
                    for bb in 0..b {
                        for k in 0..m {
                            let gb = (bb * m + k) * co * 2;
                            for i in 0..ci {
                                let xi = ((bb * m + k) * ci + i) * 2;
                                let (xr, xim) = (xv.data()[xi], xv.data()[xi + 1]);
                                let wb = (k * ci + i) * co * 2;
                                for o in 0..co {
                                    let (gr, gi) = (gd[gb + 2 * o], gd[gb + 2 * o + 1]);
                                    dw[wb + 2 * o] += gr * xr + gi * xim;
                                    dw[wb + 2 * o + 1] += -gr * xim + gi * xr;
                                }
                            }
                        }
                    }
                    acc(*w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
            }
            Op::H1 { pred, target, dt, eps } => {
                let s = target.shape();
                let (_, mut d) = h1_terms(self.value(*pred).data(), target.data(), s[0], s[1], s[2], *dt, *eps, true);
                let scale = g.item();
                for v in &mut d {
                    *v *= scale;
                }
                acc(*pred, Tensor::new(s.to_vec(), d).unwrap());
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let ds = op.backward(&vals, &node.value, g);
                for (v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        acc(*v, d);
                    }
                }
            }
        }
    }
}

fn rfft_forward(x: &[f64], b: usize, n: usize, c: usize, m: usize, tw: &TwiddleTable) -> Vec<f64> {
    let mut out = vec![0.0; b * m * c * 2];
    if fft::prefer_direct(n, m) {
        for bb in 0..b {
            let xs = &x[bb * n * c..(bb + 1) * n * c];
            let os = &mut out[bb * m * c * 2..(bb + 1) * m * c * 2];
            for k in 0..m {
                let orow = &mut os[k * c * 2..(k + 1) * c * 2];
                for j in 0..n {
                    let (cs, sn) = tw.at(j, k);
                    let xrow = &xs[j * c..(j + 1) * c];
                    for (ch, &v) in xrow.iter().enumerate() {
                        orow[2 * ch] += v * cs;
                        orow[2 * ch + 1] -= v * sn;
                    }
                }
            }
        }
    } else {
        let mut buf = vec![0.0; n];
        for bb in 0..b {
            for ch in 0..c {
                for j in 0..n {
                    buf[j] = x[(bb * n + j) * c + ch];
                }
                let modes = fft::rfft(&buf).expect("n >= 2");
                for k in 0..m {
                    let o = ((bb * m + k) * c + ch) * 2;
                    out[o] = modes[k].re;
                    out[o + 1] = modes[k].im;
                }
            }
        }
    }
    out
}

// dL/dx_j = Σ_k Gr_k cos θ_jk − Gi_k sin θ_jk
fn rfft_adjoint(g: &[f64], b: usize, n: usize, c: usize, m: usize, tw: &TwiddleTable) -> Vec<f64> {
    let mut out = vec![0.0; b * n * c];
    if fft::prefer_direct(n, m) {
        for bb in 0..b {
            let gs = &g[bb * m * c * 2..(bb + 1) * m * c * 2];
            let os = &mut out[bb * n * c..(bb + 1) * n * c];
            for j in 0..n {
                let orow = &mut os[j * c..(j + 1) * c];
                for k in 0..m {
                    let (cs, sn) = tw.at(j, k);
                    let grow = &gs[k * c * 2..(k + 1) * c * 2];
                    for (ch, o) in orow.iter_mut().enumerate() {
                        *o += grow[2 * ch] * cs - grow[2 * ch + 1] * sn;
                    }
                }
            }
        }
    } else {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for bb in 0..b {
            for ch in 0..c {
                for v in buf.iter_mut() {
                    *v = Complex64::new(0.0, 0.0);
                }
                for k in 0..m {
                    let o = ((bb * m + k) * c + ch) * 2;
                    buf[k] = Complex64::new(g[o], g[o + 1]);
                }
                fft::fft_in_place(&mut buf, true);
                for j in 0..n {
                    out[(bb * n + j) * c + ch] = buf[j].re;
                }
            }
        }
    }
    out
}

fn mode_weight(k: usize, n: usize) -> (f64, bool) {
    // (real-part weight, whether the imaginary part contributes)
    if k == 0 || (n % 2 == 0 && k == n / 2) {
        (1.0, false)
    } else {
        (2.0, true)
    }
}

fn irfft_forward(x: &[f64], b: usize, m: usize, c: usize, n: usize, tw: &TwiddleTable) -> Vec<f64> {
    let mut out = vec![0.0; b * n * c];
    let inv_n = 1.0 / n as f64;
    if fft::prefer_direct(n, m) {
        for bb in 0..b {
            let xs = &x[bb * m * c * 2..(bb + 1) * m * c * 2];
            let os = &mut out[bb * n * c..(bb + 1) * n * c];
            for j in 0..n {
                let orow = &mut os[j * c..(j + 1) * c];
                for k in 0..m {
                    let (wr, with_im) = mode_weight(k, n);
                    let (cs, sn) = tw.at(j, k);
                    let (a, s) = (wr * cs * inv_n, if with_im { wr * sn * inv_n } else { 0.0 });
                    let xrow = &xs[k * c * 2..(k + 1) * c * 2];
                    for (ch, o) in orow.iter_mut().enumerate() {
                        *o += xrow[2 * ch] * a - xrow[2 * ch + 1] * s;
                    }
                }
            }
        }
    } else {
        let mut modes = vec![Complex64::new(0.0, 0.0); m];
        for bb in 0..b {
            for ch in 0..c {
                for (k, md) in modes.iter_mut().enumerate() {
                    let o = ((bb * m + k) * c + ch) * 2;
                    *md = Complex64::new(x[o], x[o + 1]);
                }
                let sig = fft::irfft_truncated(&modes, n);
                for j in 0..n {
                    out[(bb * n + j) * c + ch] = sig[j];
                }
            }
        }
    }
    out
}

fn irfft_adjoint(g: &[f64], b: usize, m: usize, c: usize, n: usize, tw: &TwiddleTable) -> Vec<f64> {
    let mut out = vec![0.0; b * m * c * 2];
    let inv_n = 1.0 / n as f64;
    if fft::prefer_direct(n, m) {
        for bb in 0..b {
            let gs = &g[bb * n * c..(bb + 1) * n * c];
            let os = &mut out[bb * m * c * 2..(bb + 1) * m * c * 2];
            for k in 0..m {
                let (wr, with_im) = mode_weight(k, n);
                let orow = &mut os[k * c * 2..(k + 1) * c * 2];
                for j in 0..n {
                    let (cs, sn) = tw.at(j, k);
                    let grow = &gs[j * c..(j + 1) * c];
                    for (ch, &gv) in grow.iter().enumerate() {
                        orow[2 * ch] += gv * cs;
                        orow[2 * ch + 1] -= gv * sn;
                    }
                }
                for ch in 0..c {
                    orow[2 * ch] *= wr * inv_n;
                    orow[2 * ch + 1] = if with_im { orow[2 * ch + 1] * wr * inv_n } else { 0.0 };
                }
            }
        }
    } else {
        let mut buf = vec![0.0; n];
        for bb in 0..b {
            for ch in 0..c {
                for j in 0..n {
                    buf[j] = g[(bb * n + j) * c + ch];
                }
                let a = fft::rfft(&buf).expect("n >= 2");
                for k in 0..m {
                    let (wr, with_im) = mode_weight(k, n);
                    let o = ((bb * m + k) * c + ch) * 2;
                    out[o] = wr * inv_n * a[k].re;
                    out[o + 1] = if with_im { wr * inv_n * a[k].im } else { 0.0 };
                }
            }
        }
    }
    out
}

/// Finite-difference derivative: one-sided at the ends, central inside.
/// Row-major `x [rows, k] · w [k, n]`. Each output row depends only on
/// its own input row, with a fixed summation order.
pub(crate) fn matmul_rows(xv: &[f64], wv: &[f64], k: usize, n: usize) -> Vec<f64> {
    let rows = xv.len() / k.max(1);
    let mut out = vec![0.0; rows * n];
    for i in 0..rows {
        let orow = &mut out[i * n..(i + 1) * n];
        let xrow = &xv[i * k..(i + 1) * k];
        for (kk, &a) in xrow.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let wrow = &wv[kk * n..(kk + 1) * n];
            for (o, &b) in orow.iter_mut().zip(wrow) {
                *o += a * b;
            }
        }
    }
    out
}

fn swap01_data(x: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * c;
            let dst = (j * a + i) * c;
            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
        }
    }
    out
}

pub(crate) fn fd_derivative(u: &[f64], dt: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = (u[1] - u[0]) / dt;
    out[n - 1] = (u[n - 1] - u[n - 2]) / dt;
    for j in 1..n - 1 {
        out[j] = (u[j + 1] - u[j - 1]) / (2.0 * dt);
    }
}

/// Transpose of [`fd_derivative`], accumulated into `out`.
pub(crate) fn fd_transpose_add(v: &[f64], dt: f64, out: &mut [f64]) {
    let n = v.len();
    out[0] -= v[0] / dt;
    out[1] += v[0] / dt;
    out[n - 1] += v[n - 1] / dt;
    out[n - 2] -= v[n - 1] / dt;
    for j in 1..n - 1 {
        let h = v[j] / (2.0 * dt);
        out[j + 1] += h;
        out[j - 1] -= h;
    }
}

/// Returns the mean relative H1 error and, when asked, its gradient
/// with respect to `pred` (both laid out `[B, n, C]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn h1_terms(pred: &[f64], target: &[f64], b: usize, n: usize, c: usize, dt: f64, eps: f64, grad: bool) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let mut d = if grad { vec![0.0; pred.len()] } else { Vec::new() };
    let mut r = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut rd = vec![0.0; n];
    let mut ud = vec![0.0; n];
    let mut gr = vec![0.0; n];
    let denom_count = (b * c) as f64;
    for bb in 0..b {
        for ch in 0..c {
            for j in 0..n {
                let idx = (bb * n + j) * c + ch;
                u[j] = target[idx];
                r[j] = pred[idx] - target[idx];
            }
            fd_derivative(&r, dt, &mut rd);
            fd_derivative(&u, dt, &mut ud);
            let num = dt * (r.iter().map(|v| v * v).sum::<f64>() + rd.iter().map(|v| v * v).sum::<f64>());
            let den = dt * (u.iter().map(|v| v * v).sum::<f64>() + ud.iter().map(|v| v * v).sum::<f64>());
            let sden = sqrt(den + eps);
            let snum = sqrt(num);
            total += snum / sden;
            if grad && snum > 0.0 {
                gr.copy_from_slice(&r);
                fd_transpose_add(&rd, dt, &mut gr);
                let f = dt / (snum * sden * denom_count);
                for j in 0..n {
                    d[(bb * n + j) * c + ch] = gr[j] * f;
                }
            }
        }
    }
    (total / denom_count, d)
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
