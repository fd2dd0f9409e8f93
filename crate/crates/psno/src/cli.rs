//! `psno generate|train|eval|sweep|report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;
use psno_core::datagen::{self, Dataset, NormalizationStats, NormalizedRecord, Split, SplitDatasets, Window};
use psno_core::evaluation::{self, EvalError, Predictor, RunResult, SuperResRow, SweepReport};
use psno_core::operators::{count_params, within_budget, Model, ModelConfig, ModelKind};
use psno_core::smib::{SampleGrid, StabilityLabel, Trajectory};
use psno_core::training::{self, TrainConfig, TrainError, TrainingData};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, RunConfig, SEED_ENV};
use crate::error::CliError;
use crate::io::{self, Checkpoint, RunMetadata, TrainingMeta, LOSS_NAME};
use crate::report::{self, Plot, Series, PALETTE};

/// Surrogate models of single-machine infinite-bus transient dynamics.
///
/// Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numerical
/// failure.
#[derive(Debug, Parser)]
#[command(name = "psno", version)]
pub struct Cli {
    /// JSON run config; omitted sections take the defaults listed below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for data generation and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate train/val/test datasets.
    Generate(GenerateArgs),
    /// Train one model and write a checkpoint plus a loss CSV.
    Train(TrainArgs),
    /// Zero-shot super-resolution table from checkpoints.
    Eval(EvalArgs),
    /// MASE along Pm1 for 0% and 20% training mixes.
    Sweep(SweepArgs),
    /// SVG plots and a summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output sample spacing in seconds [config: sampling.dt].
    #[arg(long)]
    pub dt: Option<f64>,
    /// Share of unstable records per split [config: sampling.unstable_fraction].
    #[arg(long)]
    pub unstable_fraction: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Output directory [config: paths.data_dir].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown model {s:?} (deeponet, fno, lnode-fixed, lnode-adaptive)"))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// deeponet, fno, lnode-fixed or lnode-adaptive.
    #[arg(long, value_parser = parse_kind)]
    pub model: ModelKind,
    /// Dataset directory written by `generate` [config: paths.data_dir].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path [default: <out_dir>/<model>-run<run>.ckpt].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss CSV path [default: checkpoint path with .csv].
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run index; the training seed is seeds.train + run.
    #[arg(long, default_value_t = 0)]
    pub run: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Use the small test widths (implies --allow-any-size).
    #[arg(long)]
    pub tiny: bool,
    /// Skip the 700k ±10% parameter budget check.
    #[arg(long)]
    pub allow_any_size: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Coarse dataset directory.
    #[arg(long)]
    pub coarse: PathBuf,
    /// Fine dataset directory (same seeds, smaller dt).
    #[arg(long)]
    pub fine: PathBuf,
    /// One checkpoint per run; rows are grouped by model kind.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Evaluate an exact-target stub instead of checkpoints.
    #[arg(long, value_parser = parse_kind)]
    pub oracle: Option<ModelKind>,
    /// CSV path; a JSON copy is written next to it [default: <out_dir>/superres.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Checkpoints trained without unstable trajectories.
    #[arg(long, num_args = 1.., required = true)]
    pub mix0: Vec<PathBuf>,
    /// Checkpoints trained with 20% unstable trajectories.
    #[arg(long, num_args = 1.., required = true)]
    pub mix20: Vec<PathBuf>,
    /// Grid size over [0, Pmax] [config: evaluation.sweep_points].
    #[arg(long)]
    pub points: Option<usize>,
    /// Output directory [config: paths.out_dir].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Coarse dataset directory for the trajectory overlays.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoints to plot (first of each kind).
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// JSON written by `eval`.
    #[arg(long)]
    pub superres: Option<PathBuf>,
    /// JSON written by `sweep`.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Output directory [config: paths.out_dir].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cmd = Cli::command().after_long_help(format!("Config defaults:\n{}", RunConfig::defaults_json()));
    let cli = match cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), std::env::var(SEED_ENV).ok())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => generate(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Sweep(a) => sweep(&cfg, a),
        Command::Report(a) => render_report(&cfg, a),
    })
}

pub fn dataset_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.psds", split.name()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitSummary {
    pub records: usize,
    pub stable: usize,
    pub unstable: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub dt: f64,
    pub unstable_fraction: f64,
    pub input_len: usize,
    pub target_len: usize,
    pub splits: BTreeMap<String, SplitSummary>,
    pub stats: Option<NormalizationStats>,
}

/// Generates all three splits in parallel; order and values do not depend
/// on the worker count.
pub fn generate_splits(s: &datagen::SamplingConfig) -> Result<SplitDatasets, CliError> {
    s.validate()?;
    let gen = |split| {
        (0..s.split_size(split)).into_par_iter().map(|i| datagen::generate_record(s, split, i)).collect::<Result<Vec<_>, _>>()
    };
    Ok(datagen::assemble(s, gen(Split::Train)?, gen(Split::Val)?, gen(Split::Test)?)?)
}

fn generate(cfg: &RunConfig, a: &GenerateArgs) -> Result<(), CliError> {
    let mut s = cfg.sampling();
    if let Some(v) = a.dt {
        s.dt = v;
    }
    if let Some(v) = a.unstable_fraction {
        s.unstable_fraction = v;
    }
    s.n_train = a.n_train.unwrap_or(s.n_train);
    s.n_val = a.n_val.unwrap_or(s.n_val);
    s.n_test = a.n_test.unwrap_or(s.n_test);
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
    let start = Instant::now();
    let splits = generate_splits(&s)?;
    let mut summary = DatasetSummary {
        seed: s.seed,
        dt: s.dt,
        unstable_fraction: s.unstable_fraction,
        input_len: s.input_grid().len,
        target_len: s.target_grid().len,
        splits: BTreeMap::new(),
        stats: splits.train.stats,
    };
    for ds in [&splits.train, &splits.val, &splits.test] {
        io::save_dataset(ds, &dataset_path(&out, ds.split))?;
        let unstable = ds.records.iter().filter(|r| r.label == StabilityLabel::Unstable).count();
        summary.splits.insert(ds.split.name().into(), SplitSummary { records: ds.len(), stable: ds.len() - unstable, unstable });
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    io::write_text(&out.join("summary.json"), &(text + "\n"))?;
    info!("generated {} records in {:.1} s", s.n_train + s.n_val + s.n_test, start.elapsed().as_secs_f64());
    println!("wrote {}", out.display());
    Ok(())
}

/// Model and training configs for one run of `kind`.
pub fn run_setup(cfg: &RunConfig, kind: ModelKind, run: u64, tiny: bool) -> (ModelConfig, TrainConfig) {
    let mut tc = cfg.train_config(kind, run);
    let mc = if tiny {
        tc.allow_any_size = true;
        ModelConfig::tiny(kind)
    } else {
        cfg.model_config(kind)
    };
    (mc, tc)
}

/// Normalized train/val splits from a dataset directory.
pub fn load_training_data(dir: &Path) -> Result<TrainingData, CliError> {
    let train = io::load_dataset(&dataset_path(dir, Split::Train))?;
    let val = io::load_dataset(&dataset_path(dir, Split::Val))?;
    let stats = train.stats.ok_or_else(|| CliError::Usage(format!("{}: training split is empty", dir.display())))?;
    Ok(TrainingData { stats, train: train.normalized(&stats)?, val: val.normalized(&stats)? })
}

/// Trains one model and packages it with its provenance.
pub fn train_checkpoint(mc: &ModelConfig, tc: &TrainConfig, data: &TrainingData) -> Result<Checkpoint, CliError> {
    let start = Instant::now();
    let kind = mc.kind();
    let (model, report) = training::train_with(mc, data, tc, |e| {
        info!("{kind} epoch {}: train {:.6e} val {:.6e}", e.epoch, e.train_loss, e.val_loss)
    })?;
    Ok(Checkpoint {
        model,
        seed: tc.seed,
        training: Some(TrainingMeta { loss: LOSS_NAME.into(), config: tc.clone(), report }),
        metadata: RunMetadata { wall_seconds: Some(start.elapsed().as_secs_f64()) },
    })
}

fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    let (mc, mut tc) = run_setup(cfg, a.model, a.run, a.tiny);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.adam.lr = a.lr.unwrap_or(tc.adam.lr);
    tc.allow_any_size |= a.allow_any_size;
    let count = count_params(&mc);
    println!("{}: {count} parameters", a.model);
    if !tc.allow_any_size && !within_budget(count) {
        return Err(TrainError::Budget { count }.into());
    }
    let dir = a.data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
    let data = load_training_data(&dir)?;
    let ck = train_checkpoint(&mc, &tc, &data)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join(format!("{}-run{}.ckpt", a.model, a.run)));
    io::save_checkpoint(&ck, &out)?;
    let rep = &ck.training.as_ref().expect("trained").report;
    io::write_text(&a.report.clone().unwrap_or_else(|| out.with_extension("csv")), &report::train_csv(rep))?;
    println!("best validation loss {:.6e} at epoch {}", rep.best_val_loss(), rep.best_epoch);
    if let Some(s) = ck.metadata.wall_seconds {
        println!("wall-clock {s:.1} s");
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn load_checkpoints(paths: &[PathBuf]) -> Result<Vec<Checkpoint>, CliError> {
    paths.par_iter().map(|p| Ok(io::load_checkpoint(p)?)).collect()
}

/// Checkpoints grouped by kind, each group in the given order.
pub fn group_by_kind(cks: Vec<Checkpoint>) -> BTreeMap<ModelKind, Vec<Checkpoint>> {
    let mut out: BTreeMap<ModelKind, Vec<Checkpoint>> = BTreeMap::new();
    for c in cks {
        out.entry(c.kind()).or_default().push(c);
    }
    out
}

struct Oracle;

impl Predictor for Oracle {
    fn predict_records(&self, records: &[NormalizedRecord], grid: SampleGrid) -> Result<Vec<Window>, EvalError> {
        if records.iter().any(|r| r.target.grid() != grid) {
            return Err(EvalError::Shape("oracle queried off its target grid"));
        }
        Ok(records.iter().map(|r| r.target.clone()).collect())
    }
}

/// Super-resolution rows for groups of trained models, evaluated on paired
/// coarse and fine test sets with each model's own statistics.
pub fn superres_rows(
    groups: &BTreeMap<ModelKind, Vec<Model>>,
    coarse: &Dataset,
    fine: &Dataset,
    resamples: usize,
    seed: u64,
) -> Result<Vec<SuperResRow>, CliError> {
    evaluation::check_paired(coarse, fine)?;
    let mut cache: Vec<(NormalizationStats, Vec<NormalizedRecord>, Vec<NormalizedRecord>)> = Vec::new();
    let mut rows = Vec::new();
    for (kind, models) in groups {
        for m in models {
            if !cache.iter().any(|c| c.0 == m.norm_stats) {
                cache.push((m.norm_stats, coarse.normalized(&m.norm_stats)?, fine.normalized(&m.norm_stats)?));
            }
        }
        let results: Vec<RunResult> = models
            .par_iter()
            .map(|m| {
                let (_, c, f) = cache.iter().find(|c| c.0 == m.norm_stats).expect("cached");
                let r = evaluation::superres_run(m, c, f)?;
                info!("{kind}: coarse RMSE {:.5}, fine RMSE {:.5}", r.coarse_rmse, r.fine_rmse);
                Ok(r)
            })
            .collect::<Result<_, CliError>>()?;
        rows.push(evaluation::aggregate_superres(*kind, coarse.len(), &results, resamples, seed)?);
    }
    Ok(rows)
}

fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    let coarse = io::load_dataset(&dataset_path(&a.coarse, Split::Test))?;
    let fine = io::load_dataset(&dataset_path(&a.fine, Split::Test))?;
    let (resamples, seed) = (cfg.evaluation.bootstrap_resamples, cfg.seeds.bootstrap);
    let rows = if let Some(kind) = a.oracle {
        let stats = coarse.stats.ok_or_else(|| CliError::Usage("coarse dataset carries no training statistics".into()))?;
        vec![evaluation::superres_experiment(kind, &coarse, &fine, &stats, 1, seed, |_| Ok(Oracle))?]
    } else {
        if a.checkpoints.is_empty() {
            return Err(CliError::Usage("eval needs --checkpoints or --oracle".into()));
        }
        let groups = group_by_kind(load_checkpoints(&a.checkpoints)?)
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(|c| c.model).collect()))
            .collect();
        superres_rows(&groups, &coarse, &fine, resamples, seed)?
    };
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.join("superres.csv"));
    io::write_text(&out, &report::superres_csv(&rows))?;
    let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    io::write_text(&out.with_extension("json"), &(json + "\n"))?;
    print!("{}", report::summary_markdown(&rows));
    println!("wrote {}", out.display());
    Ok(())
}

fn sweep(cfg: &RunConfig, a: &SweepArgs) -> Result<(), CliError> {
    let mut sc = cfg.sweep_config();
    sc.points = a.points.unwrap_or(sc.points);
    let mix0 = group_by_kind(load_checkpoints(&a.mix0)?);
    let mut mix20 = group_by_kind(load_checkpoints(&a.mix20)?);
    let pairs: Vec<(Vec<Model>, Vec<Model>)> = mix0
        .into_iter()
        .filter_map(|(k, m0)| mix20.remove(&k).map(|m20| (m0, m20)))
        .map(|(m0, m20)| (m0.into_iter().map(|c| c.model).collect(), m20.into_iter().map(|c| c.model).collect()))
        .collect();
    if pairs.is_empty() {
        return Err(CliError::Usage("no model kind appears in both --mix0 and --mix20".into()));
    }
    let reports: Vec<SweepReport> =
        pairs.par_iter().map(|(m0, m20)| Ok(evaluation::regime_sweep(m0, m20, &sc)?)).collect::<Result<_, CliError>>()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    for r in &reports {
        io::write_text(&out.join(format!("sweep_{}.csv", r.model)), &report::sweep_csv(r))?;
        let (m0, m20) = r.unstable_means();
        println!("{}: threshold {:.6}, unstable-region MASE 0% {m0:.4}, 20% {m20:.4}", r.model, r.threshold);
    }
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    io::write_text(&out.join("sweep.json"), &(json + "\n"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn angle_points(t: &Trajectory) -> Vec<(f64, f64)> {
    t.delta.iter().enumerate().map(|(k, d)| (t.time(k), *d)).collect()
}

/// Truth (solid) and prediction (dotted) rotor angle for the first `count`
/// test trajectories.
pub fn overlay_plot(model: &Model, test: &Dataset, count: usize) -> Result<Plot, CliError> {
    let records = &test.records[..count.min(test.len())];
    if records.is_empty() {
        return Err(CliError::Usage("test split is empty".into()));
    }
    let stats = model.norm_stats;
    let norm: Vec<NormalizedRecord> = records.iter().map(|r| datagen::normalize(r, &stats)).collect::<Result<_, _>>()?;
    let pred = model.predict_records(&norm, norm[0].target.grid())?;
    let mut series = Vec::new();
    for (i, (r, p)) in records.iter().zip(&pred).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = angle_points(&r.input);
        pts.push((r.input.time(r.input.len() - 1), f64::NAN));
        pts.extend(angle_points(&r.target));
        series.push(Series { label: format!("#{i} truth"), points: pts, color, dotted: false });
        let phys = datagen::denormalize(p, &stats)?;
        series.push(Series { label: format!("#{i} {}", model.kind()), points: angle_points(&phys), color, dotted: true });
    }
    Ok(Plot {
        title: format!("{}: rotor angle, truth (solid) and prediction (dotted)", model.kind()),
        x_label: "time (s)".into(),
        y_label: "δ (rad)".into(),
        series,
        markers: Vec::new(),
    })
}

fn render_report(cfg: &RunConfig, a: &ReportArgs) -> Result<(), CliError> {
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    let mut written = 0;
    if !a.checkpoints.is_empty() {
        let dir = a.data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
        let test = io::load_dataset(&dataset_path(&dir, Split::Test))?;
        for (kind, cks) in group_by_kind(load_checkpoints(&a.checkpoints)?) {
            let plot = overlay_plot(&cks[0].model, &test, cfg.evaluation.overlay_count)?;
            io::write_text(&out.join(format!("overlay_{kind}.svg")), &plot.render())?;
            written += 1;
        }
    }
    if let Some(p) = &a.sweep {
        let reports: Vec<SweepReport> =
            serde_json::from_str(&io::read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        for r in &reports {
            io::write_text(&out.join(format!("sweep_{}.svg", r.model)), &report::sweep_plot(r).render())?;
            written += 1;
        }
    }
    if let Some(p) = &a.superres {
        let rows: Vec<SuperResRow> =
            serde_json::from_str(&io::read_text(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        io::write_text(&out.join("summary.md"), &report::summary_markdown(&rows))?;
        io::write_text(&out.join("summary.csv"), &report::superres_csv(&rows))?;
        written += 2;
    }
    if written == 0 {
        return Err(CliError::Usage("report needs --checkpoints, --sweep or --superres".into()));
    }
    println!("wrote {written} files to {}", out.display());
    Ok(())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
