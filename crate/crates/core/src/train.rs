//! Flow-matching training with data std shifting, logit-normal timesteps and
//! the combined MSE + velocity-direction loss.
//!
//! One iteration:
//!
//! 1. draw a minibatch of (optionally std-shifted) data and Gaussian noise,
//! 2. draw timesteps `u` from the configured sampler,
//! 3. form `x_u = α(u)·x + σ(u)·ε` and the velocity target,
//! 4. take an AdamW step on `mse + [1 − mean cos(v_pred, v)]`.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset2d;
use crate::error::{invalid, Error, Result};
use crate::eval::energy_distance;
use crate::net::{adam_step, grad_check, AdamConfig, AdamState, Mlp, MlpSpec};
use crate::rng;
use crate::sample::{integrate, unshift, Method};
use crate::schedules::{NoiseSchedule, ScheduleKind};
use crate::timestep_dist::TimestepSampler;
use crate::Point;

/// Norm floor inside the cosine.
pub const NORM_FLOOR: f64 = 1e-12;
/// Predictions smaller than this are left out of direction-loss gradient checks.
pub const DIRECTION_CHECK_MIN_NORM: f64 = 1e-6;
pub const DEFAULT_TARGET_STD: f64 = 0.82;

fn check_len<T, U>(a: &[T], b: &[U]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        })
    }
}

/// `x_u = u·data + (1 − u)·noise` per sample.
pub fn make_xt(data: &[Point], noise: &[Point], u: &[f64]) -> Result<Vec<Point>> {
    check_len(data, noise)?;
    check_len(data, u)?;
    Ok(data
        .iter()
        .zip(noise)
        .zip(u)
        .map(|((x, e), &t)| [t * x[0] + (1.0 - t) * e[0], t * x[1] + (1.0 - t) * e[1]])
        .collect())
}

/// `v = data − noise` per sample.
pub fn velocity_target(data: &[Point], noise: &[Point]) -> Result<Vec<Point>> {
    check_len(data, noise)?;
    Ok(data
        .iter()
        .zip(noise)
        .map(|(x, e)| [x[0] - e[0], x[1] - e[1]])
        .collect())
}

/// Guarded cosine: `p·g / (max(|p|, δ)·max(|g|, δ))`.
///
/// Evaluated as `p·g / sqrt(max(|p|², δ²)·max(|g|², δ²))`, which makes
/// `cos(g, g)`, `cos(2g, g)` and `cos(−g, g)` exactly ±1 in floating point.
fn guarded_cosine(p: &Point, g: &Point) -> f64 {
    let dot = p[0] * g[0] + p[1] * g[1];
    let pp = (p[0] * p[0] + p[1] * p[1]).max(NORM_FLOOR * NORM_FLOOR);
    let gg = (g[0] * g[0] + g[1] * g[1]).max(NORM_FLOOR * NORM_FLOOR);
    dot / (pp * gg).sqrt()
}

/// `1 − mean cos(v_pred, v_gt)` over samples with non-zero `v_gt`.
pub fn direction_loss(v_pred: &[Point], v_gt: &[Point]) -> Result<f64> {
    Ok(direction_loss_and_grad(v_pred, v_gt)?.0)
}

fn direction_loss_and_grad(v_pred: &[Point], v_gt: &[Point]) -> Result<(f64, Vec<Point>)> {
    check_len(v_pred, v_gt)?;
    let kept = v_gt.iter().filter(|g| g[0] != 0.0 || g[1] != 0.0).count();
    let mut grad = vec![[0.0, 0.0]; v_pred.len()];
    if kept == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / kept as f64;
    let mut cos_sum = 0.0;
    for ((p, g), dg) in v_pred.iter().zip(v_gt).zip(grad.iter_mut()) {
        if g[0] == 0.0 && g[1] == 0.0 {
            continue;
        }
        let cos = guarded_cosine(p, g);
        cos_sum += cos;
        let pn2 = p[0] * p[0] + p[1] * p[1];
        let pn = pn2.sqrt().max(NORM_FLOOR);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt().max(NORM_FLOOR);
        // ∂cos/∂p = g/(|p||g|) − cos·p/|p|², the second term vanishing on the floor.
        let radial = if pn2.sqrt() > NORM_FLOOR { cos / pn2 } else { 0.0 };
        for c in 0..2 {
            dg[c] = -scale * (g[c] / (pn * gn) - radial * p[c]);
        }
    }
    Ok((1.0 - cos_sum * scale, grad))
}

fn mse_and_grad(v_pred: &[Point], v_gt: &[Point]) -> Result<(f64, Vec<Point>)> {
    check_len(v_pred, v_gt)?;
    let n = (2 * v_pred.len()) as f64;
    let mut sum = 0.0;
    let grad = v_pred
        .iter()
        .zip(v_gt)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1]];
            sum += d[0] * d[0] + d[1] * d[1];
            [2.0 * d[0] / n, 2.0 * d[1] / n]
        })
        .collect();
    Ok((sum / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub dir: f64,
}

/// `mse + dir` (dir is zero when disabled); MSE averages over all coordinates.
pub fn total_loss(v_pred: &[Point], v_gt: &[Point], use_direction_loss: bool) -> Result<LossParts> {
    Ok(total_loss_and_grad(v_pred, v_gt, use_direction_loss)?.0)
}

/// Loss parts and `∂total/∂v_pred`.
pub fn total_loss_and_grad(
    v_pred: &[Point],
    v_gt: &[Point],
    use_direction_loss: bool,
) -> Result<(LossParts, Vec<Point>)> {
    let (mse, mut grad) = mse_and_grad(v_pred, v_gt)?;
    if !use_direction_loss {
        return Ok((LossParts { total: mse, mse, dir: 0.0 }, grad));
    }
    let (dir, dgrad) = direction_loss_and_grad(v_pred, v_gt)?;
    for (g, d) in grad.iter_mut().zip(dgrad) {
        g[0] += d[0];
        g[1] += d[1];
    }
    Ok((LossParts { total: mse + dir, mse, dir }, grad))
}

/// Every knob of a training run. Serialises field for field as the JSON
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: ScheduleKind,
    /// Timestep sampler used when multi-step balance is on.
    pub sampler: TimestepSampler,
    pub target_std: f64,
    pub use_direction_loss: bool,
    /// Std shift to `target_std` plus `sampler`; off means native std and uniform timesteps.
    pub use_multistep_balance: bool,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub model: MlpSpec,
    /// Evaluate every this many iterations (0 = never).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub eval_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: ScheduleKind::FlowLinear,
            sampler: TimestepSampler::logit_normal(0.0, 1.0).expect("valid"),
            target_std: DEFAULT_TARGET_STD,
            use_direction_loss: true,
            use_multistep_balance: true,
            lr: 1e-4,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            adam_eps: 1e-8,
            batch: 256,
            iters: 20_000,
            seed: 0,
            model: MlpSpec::default(),
            eval_every: 0,
            eval_samples: 4096,
            eval_steps: 100,
        }
    }
}

impl TrainConfig {
    /// Full recipe: std shift, lognorm(0, 1) and the direction loss.
    pub fn faster() -> Self {
        TrainConfig::default()
    }

    /// Std shift and lognorm, MSE only.
    pub fn balance_only() -> Self {
        TrainConfig {
            use_direction_loss: false,
            ..TrainConfig::default()
        }
    }

    /// Plain flow matching: native std, uniform timesteps, MSE only.
    pub fn baseline() -> Self {
        TrainConfig {
            use_direction_loss: false,
            use_multistep_balance: false,
            ..TrainConfig::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Sampler actually used for training timesteps.
    pub fn effective_sampler(&self) -> TimestepSampler {
        if self.use_multistep_balance {
            self.sampler
        } else {
            TimestepSampler::uniform().with_epsilon(self.sampler.epsilon()).expect("valid epsilon")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        if !(self.target_std > 0.0 && self.target_std.is_finite()) {
            return Err(invalid(format!("target_std must be positive, got {}", self.target_std)));
        }
        if !self.schedule.is_flow() {
            return Err(Error::UnsupportedSchedule(self.schedule));
        }
        if self.eval_every > 0 && (self.eval_samples < 2 || self.eval_steps == 0) {
            return Err(invalid("evaluation needs eval_samples >= 2 and eval_steps >= 1"));
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub mse: f64,
    pub dir: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iter: usize,
    pub energy_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iters: Vec<IterMetrics>,
    pub evals: Vec<EvalPoint>,
    /// Not part of any reproducible output.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    /// Median total loss over the first and last `frac` of iterations.
    pub fn head_tail_medians(&self, frac: f64) -> Option<(f64, f64)> {
        let n = self.iters.len();
        let k = ((n as f64 * frac).ceil() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let med = |s: &[IterMetrics]| {
            let mut v: Vec<f64> = s.iter().map(|m| m.total).collect();
            v.sort_by(f64::total_cmp);
            let m = v.len();
            0.5 * (v[(m - 1) / 2] + v[m / 2])
        };
        Some((med(&self.iters[..k]), med(&self.iters[n - k..])))
    }
}

/// Trains a fresh network on `data` and returns it with its metrics.
pub fn train(cfg: &TrainConfig, data: &Dataset2d) -> Result<(Mlp, RunMetrics)> {
    train_with_callback(cfg, data, |_, _| Ok(()))
}

/// As [`train`], calling `on_iter(iter, model)` after each optimizer step
/// (1-based iteration count).
pub fn train_with_callback<F>(cfg: &TrainConfig, data: &Dataset2d, mut on_iter: F) -> Result<(Mlp, RunMetrics)>
where
    F: FnMut(usize, &Mlp) -> Result<()>,
{
    cfg.validate()?;
    let started = Instant::now();
    let schedule = NoiseSchedule::new(cfg.schedule);
    let sampler = cfg.effective_sampler();
    let train_data = if cfg.use_multistep_balance {
        data.shift_to_std(cfg.target_std)?
    } else {
        data.clone()
    };
    let points = train_data.points();
    let adam = cfg.adam();

    let mut model = Mlp::new(cfg.model.clone(), cfg.seed)?;
    let mut state = AdamState::new(&model);
    let mut rng = rng::stream(cfg.seed, rng::streams::BATCH);
    let mut metrics = RunMetrics::default();

    let mut x = vec![[0.0; 2]; cfg.batch];
    let mut noise = vec![[0.0; 2]; cfg.batch];
    let mut u = vec![0.0; cfg.batch];
    let mut xt = vec![[0.0; 2]; cfg.batch];
    let mut target = vec![[0.0; 2]; cfg.batch];

    for it in 0..cfg.iters {
        for b in 0..cfg.batch {
            x[b] = points[rng.random_range(0..points.len())];
            noise[b] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            u[b] = sampler.sample_one(&mut rng);
        }
        if cfg.schedule == ScheduleKind::FlowLinear {
            xt = make_xt(&x, &noise, &u)?;
            target = velocity_target(&x, &noise)?;
        } else {
            for b in 0..cfg.batch {
                let (a, s) = schedule.alpha_sigma(u[b])?;
                let (da, ds) = schedule.flow_derivatives(u[b])?;
                for c in 0..2 {
                    xt[b][c] = a * x[b][c] + s * noise[b][c];
                    target[b][c] = da * x[b][c] + ds * noise[b][c];
                }
            }
        }

        let (pred, cache) = model.forward_cached(&xt, &u)?;
        let (parts, grad_out) = total_loss_and_grad(&pred, &target, cfg.use_direction_loss)?;
        if !parts.total.is_finite() {
            return Err(Error::Divergence { stage: "training", step: it + 1 });
        }
        let grads = model.backward(&cache, &grad_out)?;
        adam_step(&mut model, &grads, &mut state, &adam)?;
        metrics.iters.push(IterMetrics {
            iter: it + 1,
            mse: parts.mse,
            dir: parts.dir,
            total: parts.total,
        });

        let done = it + 1;
        if cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.iters) {
            metrics.evals.push(EvalPoint {
                iter: done,
                energy_distance: evaluate(&model, cfg, data)?,
            });
        }
        on_iter(done, &model)?;
    }
    metrics.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((model, metrics))
}

/// Energy distance between Euler samples (mapped back to the native scale)
/// and the dataset. Uses its own RNG stream so it never perturbs training.
pub fn evaluate(model: &Mlp, cfg: &TrainConfig, data: &Dataset2d) -> Result<f64> {
    let samples = integrate(
        model,
        cfg.eval_samples,
        cfg.eval_steps,
        Method::Euler,
        rng::stream(cfg.seed, rng::streams::EVAL),
    )?;
    let samples = if cfg.use_multistep_balance {
        unshift(&samples, data.native_std(), cfg.target_std)?
    } else {
        samples
    };
    energy_distance(&samples, data.points(), cfg.seed)
}

/// Gradient check of the training loss on one batch of `(x_u, u, v)`.
///
/// With the direction loss on, samples whose prediction norm is below
/// [`DIRECTION_CHECK_MIN_NORM`] are removed first: the cosine is not
/// differentiable at zero.
#[allow(clippy::too_many_arguments)]
pub fn check_gradients(
    model: &Mlp,
    xt: &[Point],
    u: &[f64],
    target: &[Point],
    use_direction_loss: bool,
    h: f64,
    max_params: usize,
    seed: u64,
) -> Result<f64> {
    check_len(xt, u)?;
    check_len(xt, target)?;
    let pred = model.forward(xt, u)?;
    let keep: Vec<usize> = (0..xt.len())
        .filter(|&i| !use_direction_loss || pred[i][0].hypot(pred[i][1]) >= DIRECTION_CHECK_MIN_NORM)
        .collect();
    if keep.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let xs: Vec<Point> = keep.iter().map(|&i| xt[i]).collect();
    let us: Vec<f64> = keep.iter().map(|&i| u[i]).collect();
    let ts: Vec<Point> = keep.iter().map(|&i| target[i]).collect();
    let loss = |p: &[Point]| {
        let (parts, grad) = total_loss_and_grad(p, &ts, use_direction_loss).expect("lengths match");
        (parts.total, grad)
    };
    grad_check(model, &xs, &us, loss, h, max_params, seed)
}
