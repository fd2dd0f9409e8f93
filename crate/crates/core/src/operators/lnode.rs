//! Latent neural ODE: encoder, learned latent dynamics, decoder.
//!
//! The latent trajectory is computed as a straight-line program whose
//! instructions are either an evaluation of the dynamics network or a linear
//! combination of earlier values. Both solvers emit such programs: the
//! fixed-step Adams–Bashforth scheme (bootstrapped by RK4) and adaptive
//! Dormand–Prince with its continuous extension. The backward pass walks the
//! program in reverse and re-evaluates each dynamics call to obtain its
//! vector-Jacobian product, so memory stays proportional to the latent
//! states rather than to every hidden activation.
//!
//! The adaptive step sequence is decided during the forward pass and then
//! treated as fixed: gradients are exact for the steps actually taken.
//! [`adaptive_schedules`] and [`forward_replay`] expose that sequence so the
//! same discrete computation can be re-run with perturbed parameters.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::mlp::{self, Plain};
use super::{scaled_time, sensor_tensor, OperatorError, QUERY_END, QUERY_START};
use crate::datagen::Window;
use crate::numcore::{Activation, CustomOp, Graph, ParamSet, ParamSpec, Tensor, Var};
use crate::ode::{error_norm, step_factor, tableau, OdeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LnodeSolver {
    FixedAdams,
    AdaptiveDopri,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LnodeConfig {
    pub sensor_times: Vec<f64>,
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub dynamics_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub solver: LnodeSolver,
    /// Latent integration starts here (end of the input window).
    pub start_time: f64,
    /// Fixed-step solver: steps per second.
    pub steps_per_unit: usize,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for LnodeConfig {
    fn default() -> Self {
        Self {
            sensor_times: vec![0.0, 0.1, 0.2],
            encoder_hidden: vec![256, 256],
            latent: 64,
            dynamics_hidden: vec![640, 640],
            decoder_hidden: vec![256, 256],
            activation: Activation::Tanh,
            solver: LnodeSolver::FixedAdams,
            start_time: 0.2,
            steps_per_unit: 100,
            rtol: 1e-6,
            atol: 1e-8,
            initial_step: 1e-2,
            max_step: 0.1,
            min_step: 1e-10,
            max_steps: 100_000,
        }
    }
}

const DYNAMICS: &str = "dynamics";

impl LnodeConfig {
    pub fn encoder_dims(&self) -> Vec<usize> {
        mlp::dims(2 * self.sensor_times.len(), &self.encoder_hidden, self.latent)
    }

    /// The scaled time is appended to the latent state as one extra input.
    pub fn dynamics_dims(&self) -> Vec<usize> {
        mlp::dims(self.latent + 1, &self.dynamics_hidden, self.latent)
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        mlp::dims(self.latent, &self.decoder_hidden, 2)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = mlp::specs("encoder", &self.encoder_dims());
        s.extend(mlp::specs(DYNAMICS, &self.dynamics_dims()));
        s.extend(mlp::specs("decoder", &self.decoder_dims()));
        s
    }

    pub fn count(&self) -> usize {
        mlp::count(&self.encoder_dims()) + mlp::count(&self.dynamics_dims()) + mlp::count(&self.decoder_dims())
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        let bad = |m: &str| Err(OperatorError::Config(String::from(m)));
        if self.sensor_times.is_empty() || self.latent == 0 {
            return bad("lnode needs sensors and a non-empty latent state");
        }
        if self.encoder_hidden.iter().chain(&self.dynamics_hidden).chain(&self.decoder_hidden).any(|w| *w == 0) {
            return bad("zero-width layer");
        }
        if !(self.start_time.is_finite() && self.start_time <= QUERY_START) {
            return bad("latent start time must not exceed the query window start");
        }
        if self.steps_per_unit == 0 {
            return bad("steps_per_unit must be positive");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.initial_step > 0.0 && self.max_step > 0.0 && self.min_step > 0.0) {
            return bad("solver tolerances and step bounds must be positive");
        }
        Ok(())
    }

    fn dynamics_names(&self) -> Vec<String> {
        (0..self.dynamics_dims().len() - 1)
            .flat_map(|i| [mlp::weight_name(DYNAMICS, i), mlp::bias_name(DYNAMICS, i)])
            .collect()
    }
}

enum Instr {
    /// Dynamics evaluated at value `x` and time `t`.
    Eval { x: usize, t: f64 },
    Lin(Vec<(usize, f64)>),
}

/// Values are numbered from 0 (the initial latent state); instruction `i`
/// produces value `i + 1`.
struct Builder<'a> {
    f: &'a Plain<'a>,
    rows: usize,
    d: usize,
    instrs: Vec<Instr>,
    values: Vec<Vec<f64>>,
}

impl<'a> Builder<'a> {
    fn new(f: &'a Plain<'a>, z0: Vec<f64>, rows: usize, d: usize) -> Self {
        Self { f, rows, d, instrs: Vec::new(), values: vec![z0] }
    }

    fn eval(&mut self, x: usize, t: f64) -> usize {
        let s = scaled_time(t);
        let d = self.d;
        let mut input = Vec::with_capacity(self.rows * (d + 1));
        for r in 0..self.rows {
            input.extend_from_slice(&self.values[x][r * d..(r + 1) * d]);
            input.push(s);
        }
        let out = self.f.forward(&input);
        self.instrs.push(Instr::Eval { x, t });
        self.values.push(out);
        self.values.len() - 1
    }

    fn lin(&mut self, terms: Vec<(usize, f64)>) -> usize {
        let mut out = vec![0.0; self.rows * self.d];
        for &(j, c) in &terms {
            for (o, v) in out.iter_mut().zip(&self.values[j]) {
                *o += c * v;
            }
        }
        self.instrs.push(Instr::Lin(terms));
        self.values.push(out);
        self.values.len() - 1
    }

    fn mark(&self) -> usize {
        self.instrs.len()
    }

    fn truncate(&mut self, mark: usize) {
        self.instrs.truncate(mark);
        self.values.truncate(mark + 1);
    }
}

/// A solved program for a contiguous block of batch rows.
struct Segment {
    row0: usize,
    rows: usize,
    instrs: Vec<Instr>,
    values: Vec<Vec<f64>>,
    /// Per query time, the combination of values giving the latent state.
    outputs: Vec<Vec<(usize, f64)>>,
}

fn push_term(terms: &mut Vec<(usize, f64)>, j: usize, c: f64) {
    if c != 0.0 {
        terms.push((j, c));
    }
}

fn solve_fixed(b: &mut Builder<'_>, t0: f64, t_end: f64, h: f64, times: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let steps = (libm::ceil((t_end - t0) / h - 1e-9) as usize).max(1);
    let mut z = vec![0usize];
    let mut f: Vec<usize> = Vec::with_capacity(steps);
    for k in 0..steps {
        let tk = t0 + k as f64 * h;
        let fk = b.eval(z[k], tk);
        f.push(fk);
        let next = if k < 3 {
            let a = b.lin(vec![(z[k], 1.0), (fk, 0.5 * h)]);
            let k2 = b.eval(a, tk + 0.5 * h);
            let bb = b.lin(vec![(z[k], 1.0), (k2, 0.5 * h)]);
            let k3 = b.eval(bb, tk + 0.5 * h);
            let c = b.lin(vec![(z[k], 1.0), (k3, h)]);
            let k4 = b.eval(c, tk + h);
            b.lin(vec![(z[k], 1.0), (fk, h / 6.0), (k2, h / 3.0), (k3, h / 3.0), (k4, h / 6.0)])
        } else {
            b.lin(vec![
                (z[k], 1.0),
                (f[k], 55.0 * h / 24.0),
                (f[k - 1], -59.0 * h / 24.0),
                (f[k - 2], 37.0 * h / 24.0),
                (f[k - 3], -9.0 * h / 24.0),
            ])
        };
        z.push(next);
    }
    times
        .iter()
        .map(|&t| {
            let pos = (t - t0) / h;
            let i = (libm::floor(pos).max(0.0) as usize).min(steps - 1);
            let w = (pos - i as f64).clamp(0.0, 1.0);
            let mut terms = Vec::with_capacity(2);
            push_term(&mut terms, z[i], 1.0 - w);
            push_term(&mut terms, z[i + 1], w);
            terms
        })
        .collect()
}

struct Step {
    t: f64,
    h: f64,
    y0: usize,
    y1: usize,
    k: [usize; 7],
}

/// Continuous-extension weights on `(y0, y1, k1..k7)` at fraction `theta`.
fn dense_weights(theta: f64, h: f64) -> ([f64; 2], [f64; 7]) {
    let th1 = 1.0 - theta;
    let q = theta * theta * th1;
    let r = q * th1;
    let cy0 = 1.0 - theta + theta * th1 - 2.0 * q;
    let cy1 = theta - theta * th1 + 2.0 * q;
    let mut ck = [0.0; 7];
    for (s, c) in ck.iter_mut().enumerate() {
        *c = h * r * tableau::D[s];
    }
    ck[0] += h * (theta * th1 - q);
    ck[6] -= h * q;
    ([cy0, cy1], ck)
}

struct AdaptiveOptions {
    rtol: f64,
    atol: f64,
    initial_step: f64,
    max_step: f64,
    min_step: f64,
    max_steps: usize,
}

fn solve_adaptive(
    b: &mut Builder<'_>,
    t0: f64,
    t_end: f64,
    opts: &AdaptiveOptions,
    schedule: Option<&[f64]>,
) -> Result<Vec<Step>, OperatorError> {
    let mut steps: Vec<Step> = Vec::new();
    let mut y = 0usize;
    let mut t = t0;
    let mut k1 = b.eval(y, t);
    let mut h = opts.initial_step.min(opts.max_step).min(t_end - t0);
    let mut rejected = false;
    let mut attempts = 0usize;
    let mut err = vec![0.0; b.rows * b.d];
    loop {
        let last = match schedule {
            Some(s) => {
                if steps.len() >= s.len() {
                    break;
                }
                h = s[steps.len()];
                steps.len() + 1 == s.len()
            }
            None => {
                attempts += 1;
                if attempts > opts.max_steps {
                    return Err(OdeError::TooManySteps { t }.into());
                }
                let last = t + h >= t_end;
                if last {
                    h = t_end - t;
                }
                last
            }
        };
        let mark = b.mark();
        let mut k = [k1; 7];
        let mut y1 = y;
        for s in 1..7 {
            let mut terms = vec![(y, 1.0)];
            for (j, kj) in k.iter().enumerate().take(s) {
                push_term(&mut terms, *kj, h * tableau::A[s][j]);
            }
            let stage = b.lin(terms);
            k[s] = b.eval(stage, t + tableau::C[s] * h);
            if s == 6 {
                y1 = stage;
            }
        }
        let accept = match schedule {
            Some(_) => true,
            None => {
                for (i, e) in err.iter_mut().enumerate() {
                    *e = h * k.iter().zip(tableau::E).map(|(kj, c)| c * b.values[*kj][i]).sum::<f64>();
                }
                let en = error_norm(&err, &b.values[y], &b.values[y1], opts.rtol, opts.atol);
                if en <= 1.0 {
                    let next = (h * step_factor(en, rejected)).min(opts.max_step);
                    rejected = false;
                    steps.push(Step { t, h, y0: y, y1, k });
                    h = next;
                    true
                } else {
                    h *= step_factor(en, true);
                    rejected = true;
                    if h < opts.min_step {
                        return Err(OdeError::StepUnderflow { t }.into());
                    }
                    false
                }
            }
        };
        if !accept {
            b.truncate(mark);
            continue;
        }
        if schedule.is_some() {
            steps.push(Step { t, h, y0: y, y1, k });
        }
        t = if last && schedule.is_none() { t_end } else { t + steps.last().unwrap().h };
        y = y1;
        k1 = k[6];
        if last {
            break;
        }
    }
    Ok(steps)
}

fn dense_outputs(steps: &[Step], times: &[f64]) -> Vec<Vec<(usize, f64)>> {
    times
        .iter()
        .map(|&t| {
            let i = match steps.binary_search_by(|s| s.t.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)) {
                Ok(i) => i,
                Err(0) => 0,
                Err(i) => i - 1,
            };
            let st = &steps[i];
            let theta = (t - st.t) / st.h;
            let (cy, ck) = dense_weights(theta, st.h);
            let mut terms = Vec::with_capacity(9);
            push_term(&mut terms, st.y0, cy[0]);
            push_term(&mut terms, st.y1, cy[1]);
            for (kj, c) in st.k.iter().zip(ck) {
                push_term(&mut terms, *kj, c);
            }
            terms
        })
        .collect()
}

struct Solved {
    segments: Vec<Segment>,
    schedules: Vec<Vec<f64>>,
}

fn solve_latent(
    cfg: &LnodeConfig,
    f: &Plain<'_>,
    z0: &[f64],
    batch: usize,
    times: &[f64],
    frozen: Option<&[Vec<f64>]>,
) -> Result<Solved, OperatorError> {
    let d = cfg.latent;
    let t0 = cfg.start_time;
    let mut segments = Vec::new();
    let mut schedules = Vec::new();
    match cfg.solver {
        LnodeSolver::FixedAdams => {
            let mut b = Builder::new(f, z0.to_vec(), batch, d);
            let outputs = solve_fixed(&mut b, t0, QUERY_END, 1.0 / cfg.steps_per_unit as f64, times);
            segments.push(Segment { row0: 0, rows: batch, instrs: b.instrs, values: b.values, outputs });
        }
        LnodeSolver::AdaptiveDopri => {
            let opts = AdaptiveOptions {
                rtol: cfg.rtol,
                atol: cfg.atol,
                initial_step: cfg.initial_step,
                max_step: cfg.max_step,
                min_step: cfg.min_step,
                max_steps: cfg.max_steps,
            };
            if let Some(fr) = frozen {
                if fr.len() != batch || fr.iter().any(|s| s.is_empty()) {
                    return Err(OperatorError::Config(String::from("frozen schedules must cover every batch row")));
                }
            }
            for r in 0..batch {
                let mut b = Builder::new(f, z0[r * d..(r + 1) * d].to_vec(), 1, d);
                let steps = solve_adaptive(&mut b, t0, QUERY_END, &opts, frozen.map(|s| s[r].as_slice()))?;
                let outputs = dense_outputs(&steps, times);
                schedules.push(steps.iter().map(|s| s.h).collect());
                segments.push(Segment { row0: r, rows: 1, instrs: b.instrs, values: b.values, outputs });
            }
        }
    }
    Ok(Solved { segments, schedules })
}

fn latent_values(segments: &[Segment], batch: usize, nq: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * nq * d];
    for seg in segments {
        for (q, terms) in seg.outputs.iter().enumerate() {
            for r in 0..seg.rows {
                let o = ((seg.row0 + r) * nq + q) * d;
                for &(j, c) in terms {
                    let v = &seg.values[j][r * d..(r + 1) * d];
                    for (dst, src) in out[o..o + d].iter_mut().zip(v) {
                        *dst += c * src;
                    }
                }
            }
        }
    }
    out
}

struct LatentOp {
    dims: Vec<usize>,
    act: Activation,
    d: usize,
    nq: usize,
    segments: Vec<Segment>,
}

impl CustomOp for LatentOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let layers = self
            .dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| mlp::Layer { w: inputs[1 + 2 * i].data(), b: inputs[2 + 2 * i].data(), fan_in: w[0], fan_out: w[1] })
            .collect();
        let f = Plain { layers, act: self.act };
        let mut pgrads: Vec<Vec<f64>> = inputs[1..].iter().map(|t| vec![0.0; t.len()]).collect();
        let (d, nq) = (self.d, self.nq);
        let batch = inputs[0].shape()[0];
        let mut gz0 = vec![0.0; batch * d];
        let g = grad_out.data();
        for seg in &self.segments {
            let width = seg.rows * d;
            let mut adj: Vec<Option<Vec<f64>>> = (0..seg.values.len()).map(|_| None).collect();
            let add = |adj: &mut Vec<Option<Vec<f64>>>, j: usize, c: f64, src: &[f64]| {
                let slot = adj[j].get_or_insert_with(|| vec![0.0; width]);
                for (a, s) in slot.iter_mut().zip(src) {
                    *a += c * s;
                }
            };
            for (q, terms) in seg.outputs.iter().enumerate() {
                let mut gq = Vec::with_capacity(width);
                for r in 0..seg.rows {
                    let o = ((seg.row0 + r) * nq + q) * d;
                    gq.extend_from_slice(&g[o..o + d]);
                }
                for &(j, c) in terms {
                    add(&mut adj, j, c, &gq);
                }
            }
            for (i, instr) in seg.instrs.iter().enumerate().rev() {
                let Some(av) = adj[i + 1].take() else { continue };
                match instr {
                    Instr::Lin(terms) => {
                        for &(j, c) in terms {
                            add(&mut adj, j, c, &av);
                        }
                    }
                    Instr::Eval { x, t } => {
                        let s = scaled_time(*t);
                        let mut input = Vec::with_capacity(seg.rows * (d + 1));
                        for r in 0..seg.rows {
                            input.extend_from_slice(&seg.values[*x][r * d..(r + 1) * d]);
                            input.push(s);
                        }
                        let (_, cache) = f.forward_cached(&input, seg.rows);
                        let gin = f.vjp(&cache, &av, &mut pgrads);
                        let gz: Vec<f64> = gin.chunks(d + 1).flat_map(|row| row[..d].iter().copied()).collect();
                        add(&mut adj, *x, 1.0, &gz);
                    }
                }
            }
            if let Some(a0) = &adj[0] {
                gz0[seg.row0 * d..seg.row0 * d + width].copy_from_slice(a0);
            }
        }
        let mut out = vec![Some(Tensor::new(vec![batch, d], gz0).unwrap())];
        for (t, gv) in inputs[1..].iter().zip(pgrads) {
            out.push(Some(Tensor::new(t.shape().to_vec(), gv).unwrap()));
        }
        out
    }
}

fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var, OperatorError> {
    vars.get(name).copied().ok_or_else(|| OperatorError::MissingParam(String::from(name)))
}

fn plain_from_tensors<'a>(cfg: &LnodeConfig, ts: &'a [Tensor]) -> Plain<'a> {
    let layers = cfg
        .dynamics_dims()
        .windows(2)
        .enumerate()
        .map(|(i, w)| mlp::Layer { w: ts[2 * i].data(), b: ts[2 * i + 1].data(), fan_in: w[0], fan_out: w[1] })
        .collect();
    Plain { layers, act: cfg.activation }
}

fn latent_tape(
    cfg: &LnodeConfig,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    inputs: &[&Window],
    times: &[f64],
    frozen: Option<&[Vec<f64>]>,
) -> Result<(Var, Vec<Vec<f64>>), OperatorError> {
    let batch = inputs.len();
    let x = g.constant(sensor_tensor(inputs, &cfg.sensor_times)?);
    let z0 = mlp::tape(g, vars, "encoder", cfg.encoder_dims().len() - 1, x, cfg.activation)?;
    let names = cfg.dynamics_names();
    let pvars: Vec<Var> = names.iter().map(|n| lookup(vars, n)).collect::<Result<_, _>>()?;
    let ptensors: Vec<Tensor> = pvars.iter().map(|v| g.value(*v).clone()).collect();
    let f = plain_from_tensors(cfg, &ptensors);
    let solved = solve_latent(cfg, &f, g.value(z0).data(), batch, times, frozen)?;
    let d = cfg.latent;
    let zq = Tensor::new(vec![batch, times.len(), d], latent_values(&solved.segments, batch, times.len(), d))?;
    let mut op_inputs = vec![z0];
    op_inputs.extend(pvars);
    let op = LatentOp { dims: cfg.dynamics_dims(), act: cfg.activation, d, nq: times.len(), segments: solved.segments };
    Ok((g.custom(&op_inputs, zq, Box::new(op)), solved.schedules))
}

pub(crate) fn forward(
    cfg: &LnodeConfig,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    inputs: &[&Window],
    times: &[f64],
) -> Result<Var, OperatorError> {
    forward_replay(cfg, g, vars, inputs, times, None)
}

/// Forward pass; with `frozen` the adaptive solver replays the given step
/// sizes (one list per batch row) instead of choosing its own.
pub fn forward_replay(
    cfg: &LnodeConfig,
    g: &mut Graph,
    vars: &BTreeMap<String, Var>,
    inputs: &[&Window],
    times: &[f64],
    frozen: Option<&[Vec<f64>]>,
) -> Result<Var, OperatorError> {
    let (z, _) = latent_tape(cfg, g, vars, inputs, times, frozen)?;
    mlp::tape(g, vars, "decoder", cfg.decoder_dims().len() - 1, z, cfg.activation)
}

/// Accepted adaptive step sizes per input (empty lists for the fixed solver).
pub fn adaptive_schedules(cfg: &LnodeConfig, params: &ParamSet, inputs: &[&Window]) -> Result<Vec<Vec<f64>>, OperatorError> {
    let z0 = encode(cfg, params, inputs)?;
    let f = Plain::from_params(params, DYNAMICS, &cfg.dynamics_dims(), cfg.activation)?;
    let solved = solve_latent(cfg, &f, &z0, inputs.len(), &[QUERY_START], None)?;
    Ok(solved.schedules)
}

fn encode(cfg: &LnodeConfig, params: &ParamSet, inputs: &[&Window]) -> Result<Vec<f64>, OperatorError> {
    let enc = Plain::from_params(params, "encoder", &cfg.encoder_dims(), cfg.activation)?;
    Ok(enc.forward(sensor_tensor(inputs, &cfg.sensor_times)?.data()))
}

/// Latent states `[B, n, d]` at the query times, without recording a tape.
pub fn latent(cfg: &LnodeConfig, params: &ParamSet, inputs: &[&Window], times: &[f64]) -> Result<Vec<f64>, OperatorError> {
    let z0 = encode(cfg, params, inputs)?;
    let f = Plain::from_params(params, DYNAMICS, &cfg.dynamics_dims(), cfg.activation)?;
    let solved = solve_latent(cfg, &f, &z0, inputs.len(), times, None)?;
    Ok(latent_values(&solved.segments, inputs.len(), times.len(), cfg.latent))
}

/// Tape-free prediction `[B, n, 2]`; identical to the values of [`forward`].
pub(crate) fn predict(cfg: &LnodeConfig, params: &ParamSet, inputs: &[&Window], times: &[f64], chunk: usize) -> Result<Vec<f64>, OperatorError> {
    let z = latent(cfg, params, inputs, times)?;
    let dec = Plain::from_params(params, "decoder", &cfg.decoder_dims(), cfg.activation)?;
    let mut out = Vec::with_capacity(inputs.len() * times.len() * 2);
    for rows in z.chunks(chunk.max(1) * cfg.latent) {
        out.extend(dec.forward(rows));
    }
    Ok(out)
}

/// Largest relative deviation of `a` from `b`, used by solver tests.
#[cfg(test)]
fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    use crate::math::abs;
    a.iter().zip(b).map(|(x, y)| abs(x - y) / abs(*y).max(1e-300)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{init_params, ParamSet};
    use crate::ode::{dense_coefficients, dense_eval};

    fn window() -> Window {
        Window { t0: 0.0, dt: 0.1, values: vec![[0.1, 0.2], [0.3, -0.1], [0.5, 0.4]] }
    }

    /// One-dimensional latent with `dz/dt = λ z`, identity decoder onto both
    /// channels and a constant encoder output `z0`.
    fn exponential_model(solver: LnodeSolver, lambda: f64, z0: f64) -> (LnodeConfig, ParamSet) {
        let cfg = LnodeConfig {
            encoder_hidden: vec![],
            latent: 1,
            dynamics_hidden: vec![],
            decoder_hidden: vec![],
            solver,
            ..Default::default()
        };
        let mut p = init_params(&cfg.param_specs(), 0);
        p.insert("encoder.0.w", Tensor::zeros(&[6, 1]));
        p.insert("encoder.0.b", Tensor::vector(vec![z0]));
        p.insert("dynamics.0.w", Tensor::new(vec![2, 1], vec![lambda, 0.0]).unwrap());
        p.insert("dynamics.0.b", Tensor::vector(vec![0.0]));
        p.insert("decoder.0.w", Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        p.insert("decoder.0.b", Tensor::vector(vec![0.0, 0.0]));
        (cfg, p)
    }

    #[test]
    fn exponential_oracle_on_the_coarse_grid() {
        let times: Vec<f64> = crate::smib::SampleGrid::new(0.3, 0.1, 29).times();
        for solver in [LnodeSolver::FixedAdams, LnodeSolver::AdaptiveDopri] {
            let (cfg, p) = exponential_model(solver, -0.5, 0.8);
            let w = window();
            let z = latent(&cfg, &p, &[&w], &times).unwrap();
            let exact: Vec<f64> = times.iter().map(|t| 0.8 * libm::exp(-0.5 * (t - 0.2))).collect();
            let err = max_rel(&z, &exact);
            assert!(err < 1e-6, "{solver:?}: {err}");
        }
    }

    #[test]
    fn adaptive_exponential_between_grid_points() {
        let times: Vec<f64> = crate::smib::SampleGrid::new(0.3, 0.0137, 200).times();
        let (cfg, p) = exponential_model(LnodeSolver::AdaptiveDopri, -0.5, 0.8);
        let z = latent(&cfg, &p, &[&window()], &times).unwrap();
        let exact: Vec<f64> = times.iter().map(|t| 0.8 * libm::exp(-0.5 * (t - 0.2))).collect();
        assert!(max_rel(&z, &exact) < 1e-6);
    }

    #[test]
    fn zero_dynamics_hold_the_encoded_state() {
        let cfg = LnodeConfig { encoder_hidden: vec![5], latent: 3, dynamics_hidden: vec![4], decoder_hidden: vec![6], ..Default::default() };
        for solver in [LnodeSolver::FixedAdams, LnodeSolver::AdaptiveDopri] {
            let cfg = LnodeConfig { solver, ..cfg.clone() };
            let mut p = init_params(&cfg.param_specs(), 4);
            for (name, t) in cfg.param_specs().iter().map(|s| (s.name.clone(), Tensor::zeros(&s.shape))) {
                if name.starts_with("dynamics") {
                    p.insert(&name, t);
                }
            }
            let w = window();
            let times = crate::smib::SampleGrid::new(0.3, 0.1, 29).times();
            let out = predict(&cfg, &p, &[&w], &times, 7).unwrap();
            let z0 = encode(&cfg, &p, &[&w]).unwrap();
            let dec = Plain::from_params(&p, "decoder", &cfg.decoder_dims(), cfg.activation).unwrap();
            let y0 = dec.forward(&z0);
            for row in out.chunks(2) {
                assert!((row[0] - y0[0]).abs() < 1e-14 && (row[1] - y0[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dense_weights_reproduce_the_integrator_extension() {
        let dim = 3;
        let h = 0.37;
        let val = |i: usize, j: usize| ((i * 7 + j * 3) as f64 * 0.61).sin();
        let y0: Vec<f64> = (0..dim).map(|j| val(0, j)).collect();
        let y1: Vec<f64> = (0..dim).map(|j| val(1, j)).collect();
        let k: [Vec<f64>; 7] = core::array::from_fn(|s| (0..dim).map(|j| val(s + 2, j)).collect());
        let mut rc = vec![0.0; 5 * dim];
        dense_coefficients(&y0, &y1, &k, h, &mut rc);
        for theta in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let mut want = vec![0.0; dim];
            dense_eval(&rc, dim, theta, &mut want);
            let (cy, ck) = dense_weights(theta, h);
            for j in 0..dim {
                let got = cy[0] * y0[j] + cy[1] * y1[j] + (0..7).map(|s| ck[s] * k[s][j]).sum::<f64>();
                assert!((got - want[j]).abs() < 1e-13, "{theta}: {got} vs {}", want[j]);
            }
        }
    }

    #[test]
    fn tape_forward_matches_tape_free_prediction() {
        let cfg = LnodeConfig { encoder_hidden: vec![5], latent: 3, dynamics_hidden: vec![4], decoder_hidden: vec![6], ..Default::default() };
        let p = init_params(&cfg.param_specs(), 9);
        let w = window();
        let times = crate::smib::SampleGrid::new(0.3, 0.1, 29).times();
        let mut g = Graph::new();
        let vars = g.params_from(&p, false);
        let y = forward(&cfg, &mut g, &vars, &[&w, &w], &times).unwrap();
        let direct = predict(&cfg, &p, &[&w, &w], &times, 5).unwrap();
        assert_eq!(g.value(y).data(), direct.as_slice());
    }

    #[test]
    fn replaying_the_schedule_reproduces_the_forward_pass() {
        let cfg = LnodeConfig {
            encoder_hidden: vec![5],
            latent: 3,
            dynamics_hidden: vec![4],
            decoder_hidden: vec![6],
            solver: LnodeSolver::AdaptiveDopri,
            ..Default::default()
        };
        let p = init_params(&cfg.param_specs(), 10);
        let w = window();
        let times = crate::smib::SampleGrid::new(0.3, 0.1, 29).times();
        let sched = adaptive_schedules(&cfg, &p, &[&w]).unwrap();
        assert!(!sched[0].is_empty());
        let run = |frozen: Option<&[Vec<f64>]>| {
            let mut g = Graph::new();
            let vars = g.params_from(&p, false);
            let y = forward_replay(&cfg, &mut g, &vars, &[&w], &times, frozen).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(None), run(Some(&sched)));
    }

    #[test]
    fn step_underflow_is_reported() {
        let (cfg, p) = exponential_model(LnodeSolver::AdaptiveDopri, -0.5, 0.8);
        let cfg = LnodeConfig { rtol: 1e-300, atol: 1e-300, min_step: 1e-3, ..cfg };
        let err = latent(&cfg, &p, &[&window()], &[0.5]).unwrap_err();
        assert!(matches!(err, OperatorError::Ode(OdeError::StepUnderflow { .. })), "{err:?}");
    }
}
