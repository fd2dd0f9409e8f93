//! Dormand–Prince 5(4) with the standard fourth-order continuous extension.
//!
//! The step sequence depends only on the right-hand side, the tolerances and
//! the end time, never on where the solution is later sampled. Two sample
//! grids over the same horizon therefore read the same piecewise polynomial.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

/// Butcher tableau and dense-output weights.
pub mod tableau {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

    pub const A: [[f64; 6]; 7] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];

    /// Difference between the fifth- and fourth-order weights.
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    pub const D: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Steps smaller than this abort the integration.
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for DenseOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            initial_step: 1e-3,
            max_step: 0.05,
            min_step: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
    #[error("end time {t_end} precedes start time {t0}")]
    BadInterval { t0: f64, t_end: f64 },
}

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Weighted RMS of the embedded error estimate.
pub fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y0).zip(y1) {
        let sk = atol + rtol * abs(*a).max(abs(*b));
        let r = e / sk;
        acc += r * r;
    }
    let n = err.len().max(1) as f64;
    let v = sqrt(acc / n);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Step-size factor after an error estimate `err` (1.0 means exactly on tolerance).
pub fn step_factor(err: f64, rejected: bool) -> f64 {
    let fac = if err == 0.0 { 5.0 } else { 0.9 * libm::pow(err, -0.2) };
    let hi = if rejected { 1.0 } else { 5.0 };
    fac.clamp(0.2, hi)
}

/// Evaluates the continuous extension stored in `rcont` (5 blocks of `dim`).
pub fn dense_eval(rcont: &[f64], dim: usize, theta: f64, out: &mut [f64]) {
    let th1 = 1.0 - theta;
    for i in 0..dim {
        let r1 = rcont[i];
        let r2 = rcont[dim + i];
        let r3 = rcont[2 * dim + i];
        let r4 = rcont[3 * dim + i];
        let r5 = rcont[4 * dim + i];
        out[i] = r1 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)));
    }
}

/// Builds the continuous-extension coefficients for one accepted step.
pub fn dense_coefficients(y0: &[f64], y1: &[f64], k: &[Vec<f64>; 7], h: f64, rcont: &mut [f64]) {
    let dim = y0.len();
    for i in 0..dim {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k[0][i] - ydiff;
        rcont[i] = y0[i];
        rcont[dim + i] = ydiff;
        rcont[2 * dim + i] = bspl;
        rcont[3 * dim + i] = ydiff - h * k[6][i] - bspl;
        let mut d = 0.0;
        for s in 0..7 {
            d += tableau::D[s] * k[s][i];
        }
        rcont[4 * dim + i] = h * d;
    }
}

/// The accepted steps of one integration, queryable anywhere in `[t0, t_end]`.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    t0: f64,
    t_end: f64,
    starts: Vec<f64>,
    widths: Vec<f64>,
    rcont: Vec<f64>,
    y_end: Vec<f64>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.starts.len()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.y_end
    }

    fn step_index(&self, t: f64) -> usize {
        // last step whose start is <= t
        match self.starts.binary_search_by(|s| s.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    /// Evaluates the solution at `t`. Times marginally outside the horizon
    /// are served by the nearest step polynomial.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        if self.starts.is_empty() {
            out.copy_from_slice(&self.y_end);
            return;
        }
        let i = self.step_index(t);
        let theta = (t - self.starts[i]) / self.widths[i];
        let block = 5 * self.dim;
        dense_eval(&self.rcont[i * block..(i + 1) * block], self.dim, theta, out);
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }
}

/// Integrates `sys` from `t0` to `t_end` with adaptive steps.
pub fn solve_dense<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &DenseOptions,
) -> Result<DenseSolution, OdeError> {
    if t_end < t0 {
        return Err(OdeError::BadInterval { t0, t_end });
    }
    let dim = sys.dim();
    let mut sol = DenseSolution {
        dim,
        t0,
        t_end,
        starts: Vec::new(),
        widths: Vec::new(),
        rcont: Vec::new(),
        y_end: y0.to_vec(),
    };
    if t_end == t0 {
        return Ok(sol);
    }

    let mut k: [Vec<f64>; 7] = core::array::from_fn(|_| vec![0.0; dim]);
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; dim];
    let mut stage = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut rc = vec![0.0; 5 * dim];
    let mut t = t0;
    let mut h = opts.initial_step.min(opts.max_step).min(t_end - t0);
    let mut rejected = false;
    let mut steps = 0usize;

    sys.eval(t, &y, &mut k[0]);
    loop {
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps { t });
        }
        steps += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += tableau::A[s][j] * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            sys.eval(t + tableau::C[s] * h, &stage, &mut tail[0]);
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
        }
        for i in 0..dim {
            let mut e = 0.0;
            for s in 0..7 {
                e += tableau::E[s] * k[s][i];
            }
            err[i] = h * e;
        }
        let en = error_norm(&err, &y, &y_new, opts.rtol, opts.atol);
        if en <= 1.0 {
            dense_coefficients(&y, &y_new, &k, h, &mut rc);
            sol.starts.push(t);
            sol.widths.push(h);
            sol.rcont.extend_from_slice(&rc);
            t = if last { t_end } else { t + h };
            y.copy_from_slice(&y_new);
            let k6 = k[6].clone();
            k[0].copy_from_slice(&k6);
            if last {
                break;
            }
            h = (h * step_factor(en, rejected)).min(opts.max_step);
            rejected = false;
        } else {
            h *= step_factor(en, true);
            rejected = true;
            if h < opts.min_step {
                return Err(OdeError::StepUnderflow { t });
            }
        }
    }
    sol.y_end = y;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = self.0 * y[0];
        }
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let sol = solve_dense(&Decay(-0.7), 0.0, &[2.0], 4.0, &DenseOptions::default()).unwrap();
        let mut out = [0.0];
        for i in 0..=400 {
            let t = i as f64 * 0.01;
            sol.eval(t, &mut out);
            let exact = 2.0 * libm::exp(-0.7 * t);
            assert!((out[0] - exact).abs() < 1e-8, "t={t} got {} want {exact}", out[0]);
        }
    }

    #[test]
    fn dense_output_is_smooth_between_steps() {
        let sol = solve_dense(&Oscillator, 0.0, &[1.0, 0.0], 10.0, &DenseOptions::default()).unwrap();
        let mut out = [0.0; 2];
        for i in 0..=10_000 {
            let t = i as f64 * 1e-3;
            sol.eval(t, &mut out);
            assert!((out[0] - libm::cos(t)).abs() < 1e-7);
            assert!((out[1] + libm::sin(t)).abs() < 1e-7);
        }
        assert!(sol.steps() >= 200, "max step 0.05 over 10 s needs >= 200 steps");
    }

    #[test]
    fn zero_length_interval_returns_initial_state() {
        let sol = solve_dense(&Decay(1.0), 1.0, &[3.0], 1.0, &DenseOptions::default()).unwrap();
        let mut out = [0.0];
        sol.eval(1.0, &mut out);
        assert_eq!(out[0], 3.0);
        assert!(solve_dense(&Decay(1.0), 1.0, &[3.0], 0.5, &DenseOptions::default()).is_err());
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[0] * y[0];
        }
    }

    #[test]
    fn finite_time_blowup_reports_failure_time() {
        // y' = y^2, y(0) = 1 blows up at t = 1.
        let err = solve_dense(&Blowup, 0.0, &[1.0], 2.0, &DenseOptions::default()).unwrap_err();
        match err {
            OdeError::StepUnderflow { t } | OdeError::TooManySteps { t } => {
                assert!(t > 0.9 && t < 1.0 + 1e-6, "failure reported at {t}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
