//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 and 8 train reference-size models and take hours; they run
//! only with `PSNO_ACCEPT_SLOW=1`. Knobs for that run:
//! `PSNO_ACCEPT_RECORDS` (2000), `PSNO_ACCEPT_TEST` (200 test trajectories),
//! `PSNO_ACCEPT_RUNS` (5), `PSNO_ACCEPT_EPOCHS` (20; `full` selects each
//! kind's default count).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use psno::cli::{generate_splits, superres_rows};
use psno_core::datagen::{NormalizationStats, SamplingConfig, SplitDatasets, Window};
use psno_core::evaluation::{self, SweepConfig, SweepReport};
use psno_core::numcore::gradcheck::{compare, finite_difference};
use psno_core::numcore::{fft, Activation, Graph, Tensor};
use psno_core::ode::DenseOptions;
use psno_core::operators::{fno, lnode, LnodeSolver, Model, ModelConfig, ModelKind};
use psno_core::rng;
use psno_core::smib::{self, MachineState, SampleGrid, SmibParams, StabilityLabel, DEFAULT_HORIZON};
use psno_core::training::{self, TrainConfig, TrainingData};
use rayon::prelude::*;

const ENERGY_DRIFT_TOL: f64 = 1e-6;
const RK4_TOL: f64 = 1e-6;
const RK4_STEP: f64 = 1e-4;
const EQUAL_AREA_TOL: f64 = 1e-10;
const BRACKET_MARGIN: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-5;
const FFT_ROUND_TRIP_TOL: f64 = 1e-12;
const SPECTRAL_TOL: f64 = 1e-10;
const LNODE_GRID_TOL: f64 = 1e-6;
const SUBSAMPLE_TOL: f64 = 1e-9;
const COARSE_RMSE_MAX: f64 = 0.05;
const PM1_MAX_UNDAMPED: f64 = 1.626;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_system(r: &mut rng::Pcg64, d: f64) -> SmibParams {
    let base = SamplingConfig::default().machine.params(d, rng::uniform(r, 0.0, 2.0), 0.0).unwrap();
    let top = smib::pm1_max(&base).unwrap();
    base.with_pm1(rng::uniform(r, 0.0, top))
}

fn rk4(p: &SmibParams, s: MachineState, t_end: f64, h: f64, every: usize) -> Vec<f64> {
    let f = |s: MachineState| smib::rhs(s, p);
    let steps = (t_end / h).round() as usize;
    let mut s = s;
    let mut out = vec![s.delta];
    for i in 1..=steps {
        let at = |s: MachineState, k: (f64, f64), c: f64| MachineState { delta: s.delta + c * k.0, omega: s.omega + c * k.1 };
        let k1 = f(s);
        let k2 = f(at(s, k1, h / 2.0));
        let k3 = f(at(s, k2, h / 2.0));
        let k4 = f(at(s, k3, h));
        s.delta += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        s.omega += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if i % every == 0 {
            out.push(s.delta);
        }
    }
    out
}

fn physics() -> Outcome {
    let opts = DenseOptions::default();
    let mut r = rng::stream(&[1, 2, 3]);
    let mut drift = 0.0f64;
    for _ in 0..100 {
        let p = random_system(&mut r, 0.0);
        let s0 = p.initial_state().map_err(fail)?;
        let e0 = p.energy(s0);
        let tr = smib::integrate(&p, s0, SampleGrid::spanning(0.0, DEFAULT_HORIZON, 1e-3), &opts).map_err(fail)?;
        for (d, w) in tr.delta.iter().zip(&tr.omega) {
            drift = drift.max((p.energy(MachineState { delta: *d, omega: *w }) - e0).abs());
        }
    }
    let mut rk = 0.0f64;
    for _ in 0..20 {
        let d = rng::uniform(&mut r, 0.0, 0.135);
        let p = random_system(&mut r, d);
        let s0 = p.initial_state().map_err(fail)?;
        let tr = smib::integrate(&p, s0, SampleGrid::spanning(0.0, DEFAULT_HORIZON, 0.1), &opts).map_err(fail)?;
        let oracle = rk4(&p, s0, DEFAULT_HORIZON, RK4_STEP, (0.1 / RK4_STEP).round() as usize);
        for (a, b) in tr.delta.iter().zip(&oracle) {
            rk = rk.max((a - b).abs());
        }
    }
    let mut ea = 0.0f64;
    for _ in 0..1000 {
        let d0 = rng::uniform(&mut r, 0.0, PI / 2.0 - 1e-6);
        let dm = smib::critical_angle(d0).map_err(fail)?;
        ea = ea.max(smib::equal_area_residual(dm, d0).abs());
    }
    let base = SmibParams::reference(0.4, 0.0, 0.0).map_err(fail)?;
    let thr = smib::pm1_max(&base).map_err(fail)?;
    let below = smib::simulate_label(&base.with_pm1(thr - BRACKET_MARGIN), DEFAULT_HORIZON, &opts).map_err(fail)?;
    let above = smib::simulate_label(&base.with_pm1(thr + BRACKET_MARGIN), DEFAULT_HORIZON, &opts).map_err(fail)?;
    let bracketed = below == StabilityLabel::Stable && above == StabilityLabel::Unstable;
    check(
        drift < ENERGY_DRIFT_TOL && rk < RK4_TOL && ea < EQUAL_AREA_TOL && bracketed,
        format!("energy drift {drift:.2e}, RK4 gap {rk:.2e} rad, equal-area residual {ea:.2e}, threshold {thr:.6} bracketed: {bracketed}"),
    )
}

fn window(seed: u64) -> Window {
    let mut r = rng::stream(&[seed, 17]);
    Window { t0: 0.0, dt: 0.1, values: (0..3).map(|_| [rng::uniform(&mut r, 0.0, 1.0), rng::uniform(&mut r, -0.5, 0.5)]).collect() }
}

fn stats() -> NormalizationStats {
    NormalizationStats::new(0.0, 3.0, 2.0).unwrap()
}

fn gradient_error(kind: ModelKind) -> Result<f64, String> {
    let cfg = ModelConfig::tiny(kind);
    let params = Model::new(cfg.clone(), 5, stats()).map_err(fail)?.params;
    let (w1, w2) = (window(1), window(2));
    let inputs = [&w1, &w2];
    let times = SampleGrid::new(0.3, 0.1, 29).times();
    let mut r = rng::stream(&[3, 23]);
    let tgt = Tensor::new(vec![2, 29, 2], (0..116).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect()).map_err(fail)?;
    let frozen = match &cfg {
        ModelConfig::Lnode(c) if c.solver == LnodeSolver::AdaptiveDopri => Some(lnode::adaptive_schedules(c, &params, &inputs).map_err(fail)?),
        _ => None,
    };
    let loss = |g: &mut Graph, p: &psno_core::ParamSet, trainable: bool| {
        let vars = g.params_from(p, trainable);
        let y = match (&cfg, &frozen) {
            (ModelConfig::Lnode(c), Some(f)) if !trainable => lnode::forward_replay(c, g, &vars, &inputs, &times, Some(f)),
            _ => cfg.forward(g, &vars, &inputs, &times),
        }
        .unwrap();
        g.h1_loss(y, tgt.clone(), 0.1, training::H1_EPS).unwrap()
    };
    let mut g = Graph::new();
    let l = loss(&mut g, &params, true);
    let analytic = g.param_grads(&g.backward(l));
    let numeric = finite_difference(
        |p| {
            let mut g = Graph::new();
            let l = loss(&mut g, p, false);
            g.value(l).item()
        },
        &params,
        1e-4,
    );
    Ok(compare(&analytic, &numeric, 1e-6).worst_relative)
}

fn gradients() -> Outcome {
    let mut worst = Vec::new();
    for kind in ModelKind::ALL {
        worst.push((kind, gradient_error(kind)?));
    }
    let ok = worst.iter().all(|(_, e)| *e < GRAD_TOL);
    check(ok, worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", "))
}

fn lowpass_oracle(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let spec: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, v)| {
                let a = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for (k, s) in spec.iter().enumerate() {
                if k < m || n - k < m {
                    let a = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    acc += s.0 * a.cos() - s.1 * a.sin();
                }
            }
            acc / n as f64
        })
        .collect()
}

fn spectral() -> Outcome {
    let mut r = rng::stream(&[9, 9]);
    let mut round = 0.0f64;
    for n in [2usize, 3, 8, 29, 64, 101, 1000] {
        let x: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let back = fft::irfft(&fft::rfft(&x).map_err(fail)?, n).map_err(fail)?;
        round = round.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let (w, modes) = (3usize, 14usize);
    let mut block = 0.0f64;
    for n in [8usize, 29, 101] {
        let m = modes.min(n / 2 + 1);
        let data: Vec<f64> = (0..n * w).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let mut ident = vec![0.0; modes * w * w * 2];
        for k in 0..modes {
            for i in 0..w {
                ident[((k * w + i) * w + i) * 2] = 1.0;
            }
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, n, w], data.clone()).map_err(fail)?);
        let s = g.constant(Tensor::new(vec![modes, w, w, 2], ident).map_err(fail)?);
        let bw = g.constant(Tensor::new(vec![w, w], vec![0.0; w * w]).map_err(fail)?);
        let bb = g.constant(Tensor::new(vec![w], vec![0.0; w]).map_err(fail)?);
        let y = fno::spectral_block(&mut g, x, s, bw, bb, modes, Activation::Identity).map_err(fail)?;
        let y = g.value(y).data().to_vec();
        for c in 0..w {
            let col: Vec<f64> = (0..n).map(|j| data[j * w + c]).collect();
            for (j, v) in lowpass_oracle(&col, m).iter().enumerate() {
                block = block.max((v - y[j * w + c]).abs());
            }
        }
    }
    check(round < FFT_ROUND_TRIP_TOL && block < SPECTRAL_TOL, format!("FFT round trip {round:.1e}, spectral block vs DFT {block:.1e}"))
}

fn loss_and_metrics() -> Outcome {
    let dt = 0.1;
    let u: Vec<[f64; 2]> = (0..29).map(|k| [(0.3 * k as f64).sin() + 0.5, (0.2 * k as f64).cos()]).collect();
    let zero = vec![[0.0; 2]; u.len()];
    let scaled: Vec<[f64; 2]> = u.iter().map(|v| [0.9 * v[0], 0.9 * v[1]]).collect();
    let h = |p: &[[f64; 2]]| training::h1_loss(p, &u, dt).unwrap();
    let (h_eq, h_zero, h_scaled) = (h(&u), h(&zero), h(&scaled));
    let h1_ok = h_eq == 0.0 && (h_zero - 1.0).abs() < 1e-9 && (h_scaled - 0.1).abs() < 1e-9;

    let persistence: Vec<[f64; 2]> = std::iter::once(u[0]).chain(u[..u.len() - 1].iter().copied()).collect();
    let m_persist = evaluation::mase(&persistence, &u).map_err(fail)?;
    let m_ramp = evaluation::mase(&[[0.0; 2]; 3], &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).map_err(fail)?;
    let mase_ok = m_persist == 1.0 && m_ramp == 1.5;

    let r1 = evaluation::rmse_values(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).map_err(fail)?;
    let r2 = evaluation::rmse_values(&[0.0; 4], &[3.0, 4.0, 3.0, 4.0]).map_err(fail)?;
    let rmse_ok = (r1 - (4.0f64 / 3.0).sqrt()).abs() < 1e-15 && (r2 - 12.5f64.sqrt()).abs() < 1e-15;
    check(
        h1_ok && mase_ok && rmse_ok,
        format!("H1 equal {h_eq}, zero {h_zero:.12}, 0.9-scaled {h_scaled:.12}; MASE persistence {m_persist}, ramp {m_ramp}; RMSE {r1:.6}, {r2:.6}"),
    )
}

fn discretization() -> Outcome {
    let (w1, w2) = (window(4), window(5));
    let (coarse_g, fine_g) = (SampleGrid::new(0.3, 0.1, 29), SampleGrid::new(0.3, 5e-5, 56001));
    let pair = |kind| -> Result<(Vec<Window>, Vec<Window>), String> {
        let m = Model::new(ModelConfig::tiny(kind), 8, stats()).map_err(fail)?;
        Ok((m.predict(&[&w1, &w2], coarse_g).map_err(fail)?, m.predict(&[&w1, &w2], fine_g).map_err(fail)?))
    };
    let (c, f) = pair(ModelKind::DeepONet)?;
    let bit_exact = c.iter().zip(&f).all(|(c, f)| (0..29).all(|k| c.values[k] == f.values[2000 * k]));
    let (c, f) = pair(ModelKind::LnodeAdaptive)?;
    let mut lnode_gap = 0.0f64;
    for (c, f) in c.iter().zip(&f) {
        for k in 0..29 {
            for ch in 0..2 {
                lnode_gap = lnode_gap.max((c.values[k][ch] - f.values[2000 * k][ch]).abs());
            }
        }
    }
    let small = SamplingConfig { n_train: 4, n_val: 0, n_test: 4, unstable_fraction: 0.25, seed: 3, ..SamplingConfig::default() };
    let coarse = generate_splits(&small).map_err(fail)?;
    let fine = generate_splits(&SamplingConfig { dt: 5e-5, ..small }).map_err(fail)?;
    let mut sub = 0.0f64;
    for (c, f) in coarse.test.records.iter().chain(&coarse.train.records).zip(fine.test.records.iter().chain(&fine.train.records)) {
        for (k, d) in c.target.delta.iter().enumerate() {
            sub = sub.max((d - f.target.delta[2000 * k]).abs());
        }
        for (k, d) in c.input.delta.iter().enumerate() {
            sub = sub.max((d - f.input.delta[2000 * k]).abs());
        }
    }
    check(
        bit_exact && lnode_gap < LNODE_GRID_TOL && sub < SUBSAMPLE_TOL,
        format!("DeepONet bit-exact: {bit_exact}, LNODE-adaptive gap {lnode_gap:.1e}, fine-to-coarse gap {sub:.1e} rad"),
    )
}

fn training_data(splits: &SplitDatasets) -> Result<TrainingData, String> {
    TrainingData::from_splits(splits).map_err(fail)
}

fn psno(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_psno")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().map_err(fail)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`psno {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn smoke() -> Outcome {
    let s = SamplingConfig { n_train: 160, n_val: 20, n_test: 20, seed: 4, ..SamplingConfig::default() };
    let data = training_data(&generate_splits(&s).map_err(fail)?)?;
    let mut lines = Vec::new();
    let mut ok = true;
    for kind in ModelKind::ALL {
        let tc = TrainConfig { epochs: 5, batch_size: 16, seed: 1, allow_any_size: true, ..TrainConfig::default() };
        let tc = TrainConfig { adam: psno_core::numcore::AdamConfig { lr: 3e-3, ..tc.adam }, ..tc };
        let (_, rep) = training::train(&ModelConfig::tiny(kind), &data, &tc).map_err(fail)?;
        let (first, best) = (rep.train_loss[0], rep.train_loss[rep.best_epoch - 1]);
        ok &= best < first;
        lines.push(format!("{kind} {first:.3}->{best:.3} (epoch {})", rep.best_epoch));
    }
    let dir = tempfile::tempdir().map_err(fail)?;
    let d = dir.path();
    let n = ["--n-train", "40", "--n-val", "10", "--n-test", "10"];
    psno(d, &[&["generate", "--out", "coarse"][..], &n].concat())?;
    psno(d, &[&["generate", "--out", "fine", "--dt", "0.001"][..], &n].concat())?;
    let mut cks = Vec::new();
    for kind in ModelKind::ALL {
        let out = format!("c/{kind}.ckpt");
        psno(d, &["train", "--model", kind.name(), "--tiny", "--epochs", "2", "--data", "coarse", "--out", &out])?;
        cks.push(out);
    }
    let ck: Vec<&str> = cks.iter().map(String::as_str).collect();
    psno(d, &[&["eval", "--coarse", "coarse", "--fine", "fine", "--out", "o/superres.csv", "--checkpoints"][..], &ck].concat())?;
    psno(d, &[&["report", "--data", "coarse", "--superres", "o/superres.json", "--out", "r", "--checkpoints"][..], &ck].concat())?;
    check(ok, format!("{}; pipeline exit 0", lines.join(", ")))
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

struct Slow {
    table: Outcome,
    sweep: Outcome,
}

fn train_group(data: &TrainingData, kind: ModelKind, runs: usize, epochs: Option<usize>) -> Result<Vec<Model>, String> {
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let tc = TrainConfig { seed: 100 + run as u64, ..TrainConfig::for_kind(kind) };
            let tc = TrainConfig { epochs: epochs.unwrap_or(tc.epochs), ..tc };
            training::train(&ModelConfig::reference(kind), data, &tc).map(|(m, _)| m).map_err(fail)
        })
        .collect()
}

fn slow() -> Slow {
    let records = env_usize("PSNO_ACCEPT_RECORDS", 2000);
    let tests = env_usize("PSNO_ACCEPT_TEST", 200);
    let runs = env_usize("PSNO_ACCEPT_RUNS", 5);
    let epochs = match std::env::var("PSNO_ACCEPT_EPOCHS").as_deref() {
        Ok("full") => None,
        Ok(v) => Some(v.parse().unwrap_or(20)),
        Err(_) => Some(20),
    };
    let sampling = |frac: f64, dt: f64| SamplingConfig {
        n_train: records,
        n_val: records / 8,
        n_test: tests,
        unstable_fraction: frac,
        dt,
        seed: 11,
        ..SamplingConfig::default()
    };
    let run = || -> Result<(Outcome, Outcome), String> {
        let mix0 = generate_splits(&sampling(0.0, 0.1)).map_err(fail)?;
        let fine = generate_splits(&SamplingConfig { n_train: 0, n_val: 0, ..sampling(0.0, 5e-5) }).map_err(fail)?;
        let mix20 = generate_splits(&sampling(0.2, 0.1)).map_err(fail)?;
        let (d0, d20) = (training_data(&mix0)?, training_data(&mix20)?);
        let mut m0 = BTreeMap::new();
        let mut m20 = BTreeMap::new();
        for kind in ModelKind::ALL {
            m0.insert(kind, train_group(&d0, kind, runs, epochs)?);
            m20.insert(kind, train_group(&d20, kind, runs, epochs)?);
        }
        let rows = superres_rows(&m0, &mix0.test, &fine.test, evaluation::BOOTSTRAP_RESAMPLES, 0).map_err(fail)?;
        let pct = |k: ModelKind| rows.iter().find(|r| r.model == k).and_then(|r| r.pct_diff).map(|p| p.point).unwrap_or(f64::NAN);
        let rmse_ok = rows.iter().all(|r| r.coarse_rmse_mean < COARSE_RMSE_MAX);
        let baseline = pct(ModelKind::DeepONet).min(pct(ModelKind::Fno));
        let lnode = pct(ModelKind::LnodeFixed).min(pct(ModelKind::LnodeAdaptive));
        let table = check(
            rmse_ok && lnode < baseline,
            rows.iter().map(|r| format!("{} RMSE {:.4} pct {:.1}", r.model, r.coarse_rmse_mean, pct(r.model))).collect::<Vec<_>>().join(", "),
        );
        let sc = SweepConfig { sampling: mix0.train.config.clone(), ..SweepConfig::default() };
        let reports: Vec<SweepReport> =
            ModelKind::ALL.iter().map(|k| evaluation::regime_sweep(&m0[k], &m20[k], &sc)).collect::<Result<_, _>>().map_err(fail)?;
        let ok = reports.iter().all(|r| {
            let (a, b) = r.unstable_means();
            b < a && r.threshold > PM1_MAX_UNDAMPED
        });
        let sweep = check(
            ok,
            reports
                .iter()
                .map(|r| {
                    let (a, b) = r.unstable_means();
                    format!("{} 0% {a:.3} vs 20% {b:.3}", r.model)
                })
                .collect::<Vec<_>>()
                .join(", ")
                + &format!(", threshold {:.4}", reports[0].threshold),
        );
        Ok((table, sweep))
    };
    match run() {
        Ok((table, sweep)) => Slow { table, sweep },
        Err(e) => Slow { table: Err(e.clone()), sweep: Err(e) },
    }
}

fn report(id: usize, name: &str, start: Instant, outcome: &Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => println!("PASS [{id}] {name}: {d} ({secs:.1} s)"),
        Err(d) => println!("FAIL [{id}] {name}: {d} ({secs:.1} s)"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let suites: [(&str, fn() -> Outcome); 6] = [
        ("physics oracles", physics),
        ("gradient checks", gradients),
        ("spectral", spectral),
        ("loss and metrics", loss_and_metrics),
        ("discretization invariance", discretization),
        ("end-to-end smoke", smoke),
    ];
    let mut ok = true;
    for (i, (name, f)) in suites.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        ok &= report(i + 1, name, t, &outcome);
    }
    if std::env::var("PSNO_ACCEPT_SLOW").as_deref() == Ok("1") {
        let t = Instant::now();
        let s = slow();
        ok &= report(7, "super-resolution ordering", t, &s.table);
        ok &= report(8, "regime sweep", t, &s.sweep);
    } else {
        println!("SKIP [7] super-resolution ordering: slow, set PSNO_ACCEPT_SLOW=1");
        println!("SKIP [8] regime sweep: slow, set PSNO_ACCEPT_SLOW=1");
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
