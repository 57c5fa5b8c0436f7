use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use snrflow::data::{generate, Dataset2d, DatasetName};
use snrflow::eval::{energy_distance, sliced_wasserstein};
use snrflow::io::{read_points_csv, write_csv_rows, write_metrics_csv, write_pdf_csv, write_points_csv};
use snrflow::net::{Activation, Mlp};
use snrflow::rng::{self, streams};
use snrflow::sample::{integrate, unshift, Method};
use snrflow::schedules::{NoiseSchedule, ScheduleKind, SnrQuery};
use snrflow::snr_pdf::{estimate_snr_pdf, EstimatorPath, PdfOptions};
use snrflow::timestep_dist::{LossWeightFn, TimestepSampler, DEFAULT_EPSILON_CLIP};
use snrflow::train::{evaluate, train_with_callback, EvalPoint, TrainConfig};

use crate::manifest::{load_config, Manifest};
use crate::{Cli, Command, GlobalArgs};

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Schedule(a) => schedule(g, a),
        Command::Pdf(a) => pdf(g, a),
        Command::SweepStd(a) => sweep_std(g, a),
        Command::Train(a) => train(g, a),
        Command::Sample(a) => sample(g, a),
        Command::Eval(a) => eval(g, a),
    }
}

fn serde_value<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    Ok((p(a)?, p(b)?))
}

fn out_dir(g: &GlobalArgs) -> Result<PathBuf> {
    let Some(dir) = &g.out else {
        bail!("--out <dir> is required for this command");
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.clone())
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

// ---------------------------------------------------------------- schedule

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// Data std folded into the log-SNR
    #[arg(long)]
    std: Option<f64>,
    /// Data-dependent factor C(I)
    #[arg(long = "c")]
    c_of_i: Option<f64>,
    /// Number of rows, evenly spaced over [eps, 1 - eps]
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScheduleConfig {
    schedule: ScheduleKind,
    std: f64,
    c_of_i: f64,
    grid: usize,
    epsilon: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            schedule: ScheduleKind::FlowLinear,
            std: 1.0,
            c_of_i: 1.0,
            grid: 101,
            epsilon: DEFAULT_EPSILON_CLIP,
        }
    }
}

#[derive(Debug, Serialize)]
struct ScheduleRow {
    u: f64,
    alpha: f64,
    sigma: f64,
    snr_rel: f64,
    logsnr_db: f64,
}

fn schedule(g: &GlobalArgs, a: &ScheduleArgs) -> Result<()> {
    let loaded = load_config::<ScheduleConfig>(g.config.as_deref(), "schedule")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    set(&mut cfg.schedule, &a.schedule);
    set(&mut cfg.std, &a.std);
    set(&mut cfg.c_of_i, &a.c_of_i);
    set(&mut cfg.grid, &a.grid);
    set(&mut cfg.epsilon, &a.epsilon);
    if cfg.grid < 2 {
        bail!("--grid must be at least 2");
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon < 0.5) {
        bail!("--epsilon must lie in (0, 0.5)");
    }
    let out = out_dir(g)?;
    let sched = NoiseSchedule::new(cfg.schedule);
    let q = SnrQuery::new(cfg.std, cfg.c_of_i)?;
    let rows = (0..cfg.grid)
        .map(|k| {
            let u = cfg.epsilon + (1.0 - 2.0 * cfg.epsilon) * k as f64 / (cfg.grid - 1) as f64;
            let (alpha, sigma) = sched.alpha_sigma(u)?;
            Ok(ScheduleRow {
                u,
                alpha,
                sigma,
                snr_rel: sched.snr_relative(u)?,
                logsnr_db: sched.log_snr_db(u, &q)?,
            })
        })
        .collect::<snrflow::Result<Vec<_>>>()?;
    write_csv_rows(&out.join("schedule.csv"), &rows)?;
    Manifest::new("schedule", seed, cfg, serde_json::json!({ "rows": rows.len() })).write(&out)
}

// ---------------------------------------------------------------- pdf

#[derive(Debug, Args)]
pub struct PdfArgs {
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// "uniform" or "lognorm(mu,sigma)"
    #[arg(long)]
    sampler: Option<TimestepSampler>,
    /// JSON file holding a loss-weight function, or "uniform"
    #[arg(long)]
    weight: Option<String>,
    #[arg(long)]
    std: Option<f64>,
    #[arg(long = "c")]
    c_of_i: Option<f64>,
    /// Number of Monte-Carlo samples
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Histogram range in dB, "lo,hi"
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    range_db: Option<(f64, f64)>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// resample or weighted
    #[arg(long, value_parser = serde_value::<EstimatorPath>)]
    path: Option<EstimatorPath>,
    /// dB window whose probability mass is reported, "lo,hi"
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    window_db: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PdfConfig {
    schedule: ScheduleKind,
    sampler: TimestepSampler,
    weight: LossWeightFn,
    std: f64,
    c_of_i: f64,
    options: PdfOptions,
    window_db: (f64, f64),
}

impl Default for PdfConfig {
    fn default() -> Self {
        PdfConfig {
            schedule: ScheduleKind::FlowLinear,
            sampler: TimestepSampler::uniform(),
            weight: LossWeightFn::Uniform,
            std: 1.0,
            c_of_i: 1.0,
            options: PdfOptions::default(),
            window_db: (-10.0, 10.0),
        }
    }
}

#[derive(Debug, Serialize)]
struct PdfResults {
    n_samples: usize,
    n_dropped: usize,
    retained_fraction: f64,
    mean_db: f64,
    var_db: f64,
    mass_in_window: f64,
}

fn pdf(g: &GlobalArgs, a: &PdfArgs) -> Result<()> {
    let loaded = load_config::<PdfConfig>(g.config.as_deref(), "pdf")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    set(&mut cfg.schedule, &a.schedule);
    set(&mut cfg.sampler, &a.sampler);
    set(&mut cfg.std, &a.std);
    set(&mut cfg.c_of_i, &a.c_of_i);
    set(&mut cfg.options.n, &a.n);
    set(&mut cfg.options.bins, &a.bins);
    set(&mut cfg.options.range_db, &a.range_db);
    set(&mut cfg.options.grid_size, &a.grid_size);
    set(&mut cfg.options.path, &a.path);
    set(&mut cfg.window_db, &a.window_db);
    if let Some(w) = &a.weight {
        cfg.weight = if w == "uniform" {
            LossWeightFn::Uniform
        } else {
            let text = fs::read_to_string(w).with_context(|| format!("reading {w}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing loss weight in {w}"))?
        };
    }
    cfg.weight.validate()?;
    let out = out_dir(g)?;
    let q = SnrQuery::new(cfg.std, cfg.c_of_i)?;
    let est = estimate_snr_pdf(
        &NoiseSchedule::new(cfg.schedule),
        &cfg.sampler,
        &cfg.weight,
        &q,
        &cfg.options,
        seed,
    )?;
    write_pdf_csv(&out.join("pdf.csv"), &est)?;
    let results = PdfResults {
        n_samples: est.n_samples,
        n_dropped: est.n_dropped,
        retained_fraction: est.retained_fraction(),
        mean_db: est.mean_db,
        var_db: est.var_db,
        mass_in_window: est.mass_in(cfg.window_db.0, cfg.window_db.1),
    };
    println!("{}", serde_json::to_string_pretty(&results)?);
    Manifest::new("pdf", seed, cfg, results).write(&out)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Multi-step balance plus direction loss
    Full,
    /// Multi-step balance, MSE only
    BalanceOnly,
    /// Native std, uniform timesteps, MSE only
    Baseline,
}

/// Training knobs shared by `train` and `sweep-std`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    dataset: Option<DatasetName>,
    /// Size of the generated training set
    #[arg(long)]
    n_data: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// Timestep sampler used under multi-step balance
    #[arg(long)]
    sampler: Option<TimestepSampler>,
    #[arg(long)]
    target_std: Option<f64>,
    #[arg(long)]
    direction_loss: Option<bool>,
    #[arg(long)]
    multistep_balance: Option<bool>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    /// Hidden widths, comma separated
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// tanh or silu
    #[arg(long, value_parser = serde_value::<Activation>)]
    activation: Option<Activation>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    eval_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataConfig {
    dataset: DatasetName,
    n_data: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: DatasetName::GaussRing8,
            n_data: 20_000,
        }
    }
}

impl TrainFlags {
    fn apply(&self, data: &mut DataConfig, t: &mut TrainConfig) {
        set(&mut data.dataset, &self.dataset);
        set(&mut data.n_data, &self.n_data);
        if let Some(p) = self.preset {
            let base = match p {
                Preset::Full => TrainConfig::faster(),
                Preset::BalanceOnly => TrainConfig::balance_only(),
                Preset::Baseline => TrainConfig::baseline(),
            };
            t.use_direction_loss = base.use_direction_loss;
            t.use_multistep_balance = base.use_multistep_balance;
        }
        set(&mut t.schedule, &self.schedule);
        set(&mut t.sampler, &self.sampler);
        set(&mut t.target_std, &self.target_std);
        set(&mut t.use_direction_loss, &self.direction_loss);
        set(&mut t.use_multistep_balance, &self.multistep_balance);
        set(&mut t.lr, &self.lr);
        set(&mut t.weight_decay, &self.weight_decay);
        set(&mut t.batch, &self.batch);
        set(&mut t.iters, &self.iters);
        set(&mut t.model.hidden, &self.hidden);
        set(&mut t.model.activation, &self.activation);
        set(&mut t.eval_every, &self.eval_every);
        set(&mut t.eval_samples, &self.eval_samples);
        set(&mut t.eval_steps, &self.eval_steps);
    }
}

fn make_dataset(d: &DataConfig, seed: u64) -> Result<Dataset2d> {
    Ok(generate(d.dataset, d.n_data, &mut rng::stream(seed, streams::DATA))?)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Write a checkpoint every this many iterations (0 = final only)
    #[arg(long)]
    ckpt_every: Option<usize>,
    /// Compute the energy distance of the final model
    #[arg(long)]
    final_eval: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRunConfig {
    data: DataConfig,
    ckpt_every: usize,
    final_eval: bool,
    train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            data: DataConfig::default(),
            ckpt_every: 0,
            final_eval: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Serialize)]
struct TrainResults {
    native_std: f64,
    final_checkpoint: String,
    final_mse: Option<f64>,
    final_dir: Option<f64>,
    final_total: Option<f64>,
    /// Median total loss over the first and last 5% of iterations.
    head_tail_medians: Option<(f64, f64)>,
    evals: Vec<EvalPoint>,
    final_energy_distance: Option<f64>,
}

fn ckpt_name(iter: usize) -> String {
    format!("ckpt_{iter}.json")
}

fn train(g: &GlobalArgs, a: &TrainArgs) -> Result<()> {
    let loaded = load_config::<TrainRunConfig>(g.config.as_deref(), "train")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    a.flags.apply(&mut cfg.data, &mut cfg.train);
    set(&mut cfg.ckpt_every, &a.ckpt_every);
    set(&mut cfg.final_eval, &a.final_eval);
    cfg.train.seed = seed;
    cfg.train.validate()?;
    let out = out_dir(g)?;

    let data = make_dataset(&cfg.data, seed)?;
    write_points_csv(&out.join("data.csv"), data.points())?;
    let every = cfg.ckpt_every;
    let total = cfg.train.iters;
    let log_every = (total / 20).max(1);
    let (model, metrics) = train_with_callback(&cfg.train, &data, |it, m| {
        if every > 0 && it % every == 0 && it != total {
            m.save(&out.join(ckpt_name(it)))?;
        }
        if it % log_every == 0 {
            eprintln!("iter {it}/{total}");
        }
        Ok(())
    })?;
    let final_checkpoint = ckpt_name(total);
    model.save(&out.join(&final_checkpoint))?;
    write_metrics_csv(&out.join("metrics.csv"), &metrics.iters)?;
    let final_energy_distance = if cfg.final_eval {
        Some(evaluate(&model, &cfg.train, &data)?)
    } else {
        None
    };
    eprintln!("trained {total} iterations in {:.1}s", metrics.wall_clock_secs);
    let last = metrics.iters.last();
    let results = TrainResults {
        native_std: data.native_std(),
        final_checkpoint,
        final_mse: last.map(|m| m.mse),
        final_dir: last.map(|m| m.dir),
        final_total: last.map(|m| m.total),
        head_tail_medians: metrics.head_tail_medians(0.05),
        evals: metrics.evals,
        final_energy_distance,
    };
    Manifest::new("train", seed, cfg, results).write(&out)
}

// ---------------------------------------------------------------- sweep-std

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Target stds, comma separated
    #[arg(long, value_delimiter = ',')]
    stds: Option<Vec<f64>>,
    /// Seeds, comma separated (default: the global seed)
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepConfig {
    stds: Vec<f64>,
    seeds: Vec<u64>,
    data: DataConfig,
    train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            stds: vec![0.5, 0.82, 1.0, 1.5],
            seeds: Vec::new(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    std: f64,
    seed: u64,
    metric: f64,
}

fn sweep_std(g: &GlobalArgs, a: &SweepArgs) -> Result<()> {
    let loaded = load_config::<SweepConfig>(g.config.as_deref(), "sweep-std")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    a.flags.apply(&mut cfg.data, &mut cfg.train);
    set(&mut cfg.stds, &a.stds);
    set(&mut cfg.seeds, &a.seeds);
    if cfg.seeds.is_empty() {
        cfg.seeds = vec![seed];
    }
    if cfg.stds.is_empty() {
        bail!("--stds must list at least one value");
    }
    if !cfg.train.use_multistep_balance {
        bail!("sweep-std needs multi-step balance on: the target std is ignored without it");
    }
    cfg.train.validate()?;
    let out = out_dir(g)?;

    let jobs: Vec<(f64, u64)> = cfg
        .stds
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&k| (s, k)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(std, run_seed)| -> Result<SweepRow> {
            let mut t = cfg.train.clone();
            t.target_std = std;
            t.seed = run_seed;
            t.validate()?;
            let data = make_dataset(&cfg.data, run_seed)?;
            let (model, metrics) = train_with_callback(&t, &data, |_, _| Ok(()))?;
            let metric = evaluate(&model, &t, &data)?;
            let dir = out.join(format!("std_{std}_seed_{run_seed}"));
            fs::create_dir_all(&dir)?;
            model.save(&dir.join(ckpt_name(t.iters)))?;
            write_metrics_csv(&dir.join("metrics.csv"), &metrics.iters)?;
            eprintln!("std {std} seed {run_seed}: energy distance {metric:.6}");
            Ok(SweepRow { std, seed: run_seed, metric })
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv_rows(&out.join("sweep.csv"), &rows)?;
    Manifest::new("sweep-std", seed, cfg, serde_json::json!({ "rows": rows })).write(&out)
}

// ---------------------------------------------------------------- sample

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of samples
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// euler or heun
    #[arg(long, value_parser = serde_value::<Method>)]
    method: Option<Method>,
    /// Map samples back to the data scale: "native_std,target_std"
    #[arg(long, value_parser = parse_pair, conflicts_with = "train_manifest")]
    unshift: Option<(f64, f64)>,
    /// Take the unshift scales from a `train` manifest
    #[arg(long)]
    train_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SampleConfig {
    checkpoint: PathBuf,
    n: usize,
    steps: usize,
    method: Method,
    unshift: Option<(f64, f64)>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            checkpoint: PathBuf::new(),
            n: 4096,
            steps: 250,
            method: Method::Euler,
            unshift: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct SampleResults {
    mean: [f64; 2],
    std: [f64; 2],
}

fn unshift_from_train_manifest(path: &Path) -> Result<Option<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    if v.get("command").and_then(|c| c.as_str()) != Some("train") {
        bail!("{} is not a train manifest", path.display());
    }
    let balance = v.pointer("/config/train/use_multistep_balance").and_then(|b| b.as_bool());
    let native = v.pointer("/results/native_std").and_then(|b| b.as_f64());
    let target = v.pointer("/config/train/target_std").and_then(|b| b.as_f64());
    match (balance, native, target) {
        (Some(false), _, _) => Ok(None),
        (Some(true), Some(n), Some(t)) => Ok(Some((n, t))),
        _ => bail!("{} lacks the std fields of a train manifest", path.display()),
    }
}

fn column_moments(points: &[snrflow::Point]) -> SampleResults {
    let n = points.len() as f64;
    let mean = [0, 1].map(|c| points.iter().map(|p| p[c]).sum::<f64>() / n);
    let std = [0, 1].map(|c| (points.iter().map(|p| (p[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt());
    SampleResults { mean, std }
}

fn sample(g: &GlobalArgs, a: &SampleArgs) -> Result<()> {
    let loaded = load_config::<SampleConfig>(g.config.as_deref(), "sample")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    set(&mut cfg.checkpoint, &a.checkpoint);
    set(&mut cfg.n, &a.n);
    set(&mut cfg.steps, &a.steps);
    set(&mut cfg.method, &a.method);
    if a.unshift.is_some() {
        cfg.unshift = a.unshift;
    }
    if let Some(p) = &a.train_manifest {
        cfg.unshift = unshift_from_train_manifest(p)?;
    }
    if cfg.checkpoint.as_os_str().is_empty() {
        bail!("--checkpoint is required");
    }
    if cfg.n == 0 {
        bail!("--n must be at least 1");
    }
    let out = out_dir(g)?;
    let model = Mlp::load(&cfg.checkpoint).with_context(|| format!("loading {}", cfg.checkpoint.display()))?;
    let mut samples = integrate(&model, cfg.n, cfg.steps, cfg.method, rng::stream(seed, streams::EVAL))?;
    if let Some((native, target)) = cfg.unshift {
        samples = unshift(&samples, native, target)?;
    }
    write_points_csv(&out.join("samples.csv"), &samples)?;
    let results = column_moments(&samples);
    Manifest::new("sample", seed, cfg, results).write(&out)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// First point CSV (header x,y)
    #[arg(long)]
    a: Option<PathBuf>,
    /// Second point CSV
    #[arg(long)]
    b: Option<PathBuf>,
    /// Random directions for the sliced Wasserstein distance
    #[arg(long)]
    projections: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    a: PathBuf,
    b: PathBuf,
    projections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            a: PathBuf::new(),
            b: PathBuf::new(),
            projections: 128,
        }
    }
}

#[derive(Debug, Serialize)]
struct EvalResults {
    energy_distance: f64,
    sliced_wasserstein: f64,
}

fn eval(g: &GlobalArgs, a: &EvalArgs) -> Result<()> {
    let loaded = load_config::<EvalConfig>(g.config.as_deref(), "eval")?;
    let seed = g.seed.or(loaded.seed).unwrap_or(0);
    let mut cfg = loaded.config;
    set(&mut cfg.a, &a.a);
    set(&mut cfg.b, &a.b);
    set(&mut cfg.projections, &a.projections);
    if cfg.a.as_os_str().is_empty() || cfg.b.as_os_str().is_empty() {
        bail!("--a and --b are required");
    }
    let pa = read_points_csv(&cfg.a).with_context(|| format!("reading {}", cfg.a.display()))?;
    let pb = read_points_csv(&cfg.b).with_context(|| format!("reading {}", cfg.b.display()))?;
    let results = EvalResults {
        energy_distance: energy_distance(&pa, &pb, seed)?,
        sliced_wasserstein: sliced_wasserstein(&pa, &pb, cfg.projections, seed)?,
    };
    println!("{}", serde_json::to_string_pretty(&results)?);
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir)?;
        Manifest::new("eval", seed, cfg, results).write(dir)?;
    }
    Ok(())
}
