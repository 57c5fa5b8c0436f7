//! A tiny MLP velocity model with hand-written reverse mode and AdamW.
//!
//! Input is `[x, y, sin(2^k π u), cos(2^k π u) for k < K]`, hidden layers use
//! one shared activation, the output layer is linear with two units.
//!
//! Every sample in a batch is evaluated with the same sequence of floating
//! point operations, so a row's output does not depend on the rest of the
//! batch, and gradients are accumulated in batch order.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::Point;

pub const DEFAULT_TIME_FREQS: usize = 8;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];
pub const CHECKPOINT_FORMAT: &str = "snrflow-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// Architecture of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_freqs: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Tanh,
            time_freqs: DEFAULT_TIME_FREQS,
        }
    }
}

impl MlpSpec {
    pub fn input_dim(&self) -> usize {
        2 + 2 * self.time_freqs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(2);
        sizes
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// Dense layer; `weights[i * n_out + j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn forward(&self, input: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.n_out, 0.0);
        for (x, o) in input.chunks_exact(self.n_in).zip(out.chunks_exact_mut(self.n_out)) {
            o.copy_from_slice(&self.biases);
            for (&xi, w) in x.iter().zip(self.weights.chunks_exact(self.n_out)) {
                for (oj, &wj) in o.iter_mut().zip(w) {
                    *oj += xi * wj;
                }
            }
        }
    }

    fn transposed_weights(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.weights.len()];
        for i in 0..self.n_in {
            for j in 0..self.n_out {
                t[j * self.n_in + i] = self.weights[i * self.n_out + j];
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    spec: MlpSpec,
    version: u64,
}

/// Activations saved by [`Mlp::forward_cached`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    /// `inputs[l]` is the input of layer `l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients with the same shapes as an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
}

impl GradientSet {
    pub fn zeros_like(m: &Mlp) -> Self {
        GradientSet {
            layers: m.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn congruent(&self, m: &Mlp) -> bool {
        self.layers.len() == m.layers.len()
            && self
                .layers
                .iter()
                .zip(&m.layers)
                .all(|(g, l)| g.n_in == l.n_in && g.n_out == l.n_out)
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

/// Sinusoidal features of `u`: `sin, cos` of `2^k π u` for `k < freqs`.
pub fn time_embedding(u: f64, freqs: usize, out: &mut [f64]) {
    let mut scale = PI;
    for k in 0..freqs {
        let (s, c) = (scale * u).sin_cos();
        out[2 * k] = s;
        out[2 * k + 1] = c;
        scale *= 2.0;
    }
}

impl Mlp {
    /// Glorot-uniform weights and zero biases, seeded.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(spec)?;
        let mut rng = rng::stream(seed, rng::streams::INIT);
        for layer in &mut m.layers {
            let limit = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let sizes = spec.layer_sizes();
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Mlp {
            layers,
            spec,
            version: fresh_version(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version = fresh_version();
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.spec.layer_sizes()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for layer in self.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        self.version = fresh_version();
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if idx < nw {
                return &mut layer.weights[idx];
            }
            idx -= nw;
            if idx < layer.biases.len() {
                return &mut layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn embed(&self, x: &[Point], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != u.len() {
            return Err(Error::ShapeMismatch {
                expected: x.len(),
                got: u.len(),
            });
        }
        let dim = self.spec.input_dim();
        let mut input = vec![0.0; x.len() * dim];
        for ((row, p), &t) in input.chunks_exact_mut(dim).zip(x).zip(u) {
            row[0] = p[0];
            row[1] = p[1];
            time_embedding(t, self.spec.time_freqs, &mut row[2..]);
        }
        Ok(input)
    }

    /// Predicted velocity for each `(x_t, u)` pair.
    pub fn forward(&self, x: &[Point], u: &[f64]) -> Result<Vec<Point>> {
        Ok(self.forward_cached(x, u)?.0)
    }

    pub fn forward_cached(&self, x: &[Point], u: &[f64]) -> Result<(Vec<Point>, ForwardCache)> {
        let batch = x.len();
        let act = self.spec.activation;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(self.embed(x, u)?);
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&inputs[l], batch, &mut z);
            if l == last {
                out = z;
            } else {
                inputs.push(z.iter().map(|&v| act.apply(v)).collect());
                pre.push(z);
            }
        }
        let pred = out.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok((
            pred,
            ForwardCache {
                version: self.version,
                batch,
                inputs,
                pre,
            },
        ))
    }

    /// Parameter gradients given `∂L/∂output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[Point]) -> Result<GradientSet> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if grad_out.len() != cache.batch {
            return Err(Error::ShapeMismatch {
                expected: cache.batch,
                got: grad_out.len(),
            });
        }
        let batch = cache.batch;
        let act = self.spec.activation;
        let mut grads = GradientSet::zeros_like(self);
        let mut delta: Vec<f64> = grad_out.iter().flatten().copied().collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let g = &mut grads.layers[l];
            for (x, d) in cache.inputs[l].chunks_exact(n_in).zip(delta.chunks_exact(n_out)) {
                for (gb, &dj) in g.biases.iter_mut().zip(d) {
                    *gb += dj;
                }
                for (&xi, gw) in x.iter().zip(g.weights.chunks_exact_mut(n_out)) {
                    for (gwj, &dj) in gw.iter_mut().zip(d) {
                        *gwj += xi * dj;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let wt = layer.transposed_weights();
            let mut next = vec![0.0; batch * n_in];
            for (nd, d) in next.chunks_exact_mut(n_in).zip(delta.chunks_exact(n_out)) {
                for (&dj, w) in d.iter().zip(wt.chunks_exact(n_in)) {
                    for (ni, &wi) in nd.iter_mut().zip(w) {
                        *ni += dj * wi;
                    }
                }
            }
            let z = &cache.pre[l - 1];
            let a = &cache.inputs[l];
            for ((ni, &zi), &ai) in next.iter_mut().zip(z).zip(a) {
                *ni *= act.derivative(zi, ai);
            }
            delta = next;
        }
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes(),
            activation: self.spec.activation,
            time_freqs: self.spec.time_freqs,
            params: self.params_flat(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let sizes = &ckpt.layer_sizes;
        if sizes.len() < 2 || sizes[0] != 2 + 2 * ckpt.time_freqs || sizes[sizes.len() - 1] != 2 {
            return Err(Error::Format(format!("inconsistent layer sizes {sizes:?}")));
        }
        let spec = MlpSpec {
            hidden: sizes[1..sizes.len() - 1].to_vec(),
            activation: ckpt.activation,
            time_freqs: ckpt.time_freqs,
        };
        let mut m = Mlp::zeros(spec)?;
        m.set_params_flat(&ckpt.params)?;
        if !m.is_finite() {
            return Err(Error::Format("checkpoint contains non-finite parameters".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        Mlp::from_checkpoint(&ckpt)
    }
}

/// On-disk form of an [`Mlp`]: layer sizes plus all parameters, layer by
/// layer, weights (input-major) before biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub time_freqs: usize,
    pub params: Vec<f64>,
}

/// Gradients below this magnitude are compared on an absolute scale in
/// [`grad_check`]; central differences cannot resolve them relatively.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between backprop and central differences.
///
/// `loss` maps a batch of predictions to `(L, ∂L/∂pred)`. At most
/// `max_params` parameters are checked, chosen with `seed`.
pub fn grad_check<F>(
    m: &Mlp,
    x: &[Point],
    u: &[f64],
    loss: F,
    h: f64,
    max_params: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[Point]) -> (f64, Vec<Point>),
{
    let (pred, cache) = m.forward_cached(x, u)?;
    let analytic = m.backward(&cache, &loss(&pred).1)?.flat();
    let n = m.num_params();
    let picks: Vec<usize> = if n <= max_params {
        (0..n).collect()
    } else {
        let mut r = rng::stream(seed, rng::streams::SUBSAMPLE);
        let mut v = index::sample(&mut r, n, max_params).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for idx in picks {
        let p0 = m.params_flat()[idx];
        *probe.param_mut(idx) = p0 + h;
        let plus = loss(&probe.forward(x, u)?).0;
        *probe.param_mut(idx) = p0 - h;
        let minus = loss(&probe.forward(x, u)?).0;
        *probe.param_mut(idx) = p0;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &Mlp) -> Self {
        AdamState {
            m: GradientSet::zeros_like(model),
            v: GradientSet::zeros_like(model),
            step: 0,
        }
    }
}

/// One AdamW update of `params` in place; `step` is 1 on the first call.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= cfg.lr * cfg.weight_decay * *p;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// AdamW step on every parameter of `model`.
pub fn adam_step(model: &mut Mlp, g: &GradientSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if !g.congruent(model) || !state.m.congruent(model) || !state.v.congruent(model) {
        return Err(invalid("gradient or optimizer state does not match the model"));
    }
    state.step += 1;
    let step = state.step;
    for (((layer, gl), ml), vl) in model
        .layers_mut()
        .iter_mut()
        .zip(&g.layers)
        .zip(&mut state.m.layers)
        .zip(&mut state.v.layers)
    {
        adamw_update(&mut layer.weights, &gl.weights, &mut ml.weights, &mut vl.weights, step, cfg);
        adamw_update(&mut layer.biases, &gl.biases, &mut ml.biases, &mut vl.biases, step, cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_spec() -> MlpSpec {
        MlpSpec {
            hidden: vec![16, 16],
            activation: Activation::Tanh,
            time_freqs: 4,
        }
    }

    fn batch(n: usize, seed: u64) -> (Vec<Point>, Vec<f64>) {
        let mut r = rng::stream(seed, 99);
        let x = (0..n).map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)]).collect();
        let u = (0..n).map(|_| r.random_range(0.01..0.99)).collect();
        (x, u)
    }

    fn mse(target: Vec<Point>) -> impl Fn(&[Point]) -> (f64, Vec<Point>) {
        move |pred: &[Point]| {
            let n = (2 * pred.len()) as f64;
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(&target)
                .map(|(p, t)| {
                    let d = [p[0] - t[0], p[1] - t[1]];
                    loss += d[0] * d[0] + d[1] * d[1];
                    [2.0 * d[0] / n, 2.0 * d[1] / n]
                })
                .collect();
            (loss / n, grad)
        }
    }

    /// Straightforward matrix-vector evaluation used as an independent oracle.
    #[allow(clippy::needless_range_loop)]
    fn oracle_forward(m: &Mlp, x: Point, u: f64) -> Point {
        let k = m.spec().time_freqs;
        let mut h = vec![x[0], x[1]];
        for i in 0..k {
            let w = 2f64.powi(i as i32) * PI * u;
            h.push(w.sin());
            h.push(w.cos());
        }
        let n_layers = m.layers().len();
        for (l, layer) in m.layers().iter().enumerate() {
            let mut z = layer.biases.clone();
            for j in 0..layer.n_out {
                for i in 0..layer.n_in {
                    z[j] += layer.weights[i * layer.n_out + j] * h[i];
                }
            }
            h = if l + 1 == n_layers { z } else { z.iter().map(|v| v.tanh()).collect() };
        }
        [h[0], h[1]]
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(MlpSpec::default()).unwrap();
        let (x, u) = batch(10, 0);
        assert!(m.forward(&x, &u).unwrap().iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn rows_do_not_depend_on_batch() {
        let m = Mlp::new(MlpSpec::default(), 3).unwrap();
        let (x, u) = batch(64, 1);
        let full = m.forward(&x, &u).unwrap();
        for i in [0, 17, 63] {
            assert_eq!(m.forward(&x[i..=i], &u[i..=i]).unwrap()[0], full[i]);
        }
    }

    #[test]
    fn forward_matches_oracle_and_snapshot() {
        let m = Mlp::new(MlpSpec::default(), 42).unwrap();
        assert_eq!(m.layer_sizes(), vec![18, 128, 128, 2]);
        let out = m.forward(&[[0.3, -0.7]], &[0.25]).unwrap()[0];
        let oracle = oracle_forward(&m, [0.3, -0.7], 0.25);
        assert!((out[0] - oracle[0]).abs() < 1e-12 && (out[1] - oracle[1]).abs() < 1e-12);
        // Snapshot of seed 42 on the INIT stream; catches silent init or RNG changes.
        let golden = [-0.04594951060034592, 0.08764505222562224];
        assert!((out[0] - golden[0]).abs() < 1e-12 && (out[1] - golden[1]).abs() < 1e-12, "{out:?}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = Mlp::zeros(small_spec()).unwrap();
        assert!(matches!(
            m.forward(&[[0.0, 0.0]; 3], &[0.5; 2]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let m = Mlp::new(small_spec(), 0).unwrap();
        let (x, u) = batch(8, 0);
        let (_, cache) = m.forward_cached(&x, &u).unwrap();
        let g = m.backward(&cache, &[[0.0, 0.0]; 8]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let m = Mlp::new(small_spec(), 1).unwrap();
        let (x, u) = batch(8, 2);
        let (_, cache) = m.forward_cached(&x, &u).unwrap();
        let up: Vec<Point> = (0..8).map(|i| [i as f64 * 0.1, 1.0 - i as f64 * 0.2]).collect();
        let twice: Vec<Point> = up.iter().map(|p| [2.0 * p[0], 2.0 * p[1]]).collect();
        let g1 = m.backward(&cache, &up).unwrap().flat();
        let g2 = m.backward(&cache, &twice).unwrap().flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Mlp::new(small_spec(), 1).unwrap();
        let (x, u) = batch(4, 2);
        let (_, cache) = m.forward_cached(&x, &u).unwrap();
        m.layers_mut()[0].biases[0] += 1.0;
        assert!(matches!(m.backward(&cache, &[[1.0, 0.0]; 4]), Err(Error::StaleCache)));
        let other = Mlp::new(small_spec(), 1).unwrap();
        assert!(matches!(other.backward(&cache, &[[1.0, 0.0]; 4]), Err(Error::StaleCache)));
    }

    #[test]
    fn single_linear_layer_least_squares_gradient() {
        // No hidden layers: pred = Wᵀ·φ + b, so ∂L/∂W = Φᵀ(P − T)·2/(2n) in closed form.
        let spec = MlpSpec {
            hidden: vec![],
            activation: Activation::Tanh,
            time_freqs: 1,
        };
        let m = Mlp::new(spec, 5).unwrap();
        let (x, u) = batch(6, 3);
        let target: Vec<Point> = (0..6).map(|i| [i as f64, -(i as f64)]).collect();
        let (pred, cache) = m.forward_cached(&x, &u).unwrap();
        let g = m.backward(&cache, &mse(target.clone())(&pred).1).unwrap();
        let n = 12.0;
        for i in 0..4 {
            for j in 0..2 {
                let mut expect = 0.0;
                for b in 0..6 {
                    let phi = match i {
                        0 => x[b][0],
                        1 => x[b][1],
                        2 => (PI * u[b]).sin(),
                        _ => (PI * u[b]).cos(),
                    };
                    expect += 2.0 * phi * (pred[b][j] - target[b][j]) / n;
                }
                assert!((g.layers[0].weights[i * 2 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_check_mse_tanh_and_silu() {
        for activation in [Activation::Tanh, Activation::Silu] {
            let spec = MlpSpec {
                activation,
                ..small_spec()
            };
            let m = Mlp::new(spec, 7).unwrap();
            let (x, u) = batch(16, 4);
            let target = batch(16, 5).0;
            let err = grad_check(&m, &x, &u, mse(target), 1e-5, 300, 0).unwrap();
            assert!(err < 1e-4, "{activation:?}: {err}");
        }
    }

    #[test]
    fn zero_network_mse_gradient_is_finite() {
        let m = Mlp::zeros(small_spec()).unwrap();
        let (x, u) = batch(8, 1);
        let target = vec![[1.0, -2.0]; 8];
        let (pred, cache) = m.forward_cached(&x, &u).unwrap();
        let g = m.backward(&cache, &mse(target.clone())(&pred).1).unwrap();
        assert!(g.is_finite());
        // Only the output bias sees a gradient: mean of 2(0 − t)/2.
        let out_b = &g.layers.last().unwrap().biases;
        assert!((out_b[0] - -1.0).abs() < 1e-12 && (out_b[1] - 2.0).abs() < 1e-12);
        assert!(grad_check(&m, &x, &u, mse(target), 1e-5, 300, 0).unwrap() < 1e-4);
    }

    #[test]
    fn adam_single_scalar_step() {
        let mut w = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adamw_update(&mut w, &[1.0], &mut m, &mut v, 1, &cfg);
        // m̂ = v̂ = 1, so the step is lr/(1 + ε).
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut model = Mlp::new(small_spec(), 2).unwrap();
        let before = model.params_flat();
        let g = GradientSet::zeros_like(&model);
        let mut st = AdamState::new(&model);
        adam_step(&mut model, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(model.params_flat(), before);
    }

    #[test]
    fn adam_is_deterministic_and_decays_weights() {
        let model = Mlp::new(small_spec(), 2).unwrap();
        let (x, u) = batch(8, 0);
        let (pred, cache) = model.forward_cached(&x, &u).unwrap();
        let g = model.backward(&cache, &mse(vec![[1.0, 1.0]; 8])(&pred).1).unwrap();
        let run = |cfg: AdamConfig| {
            let mut m = model.clone();
            let mut st = AdamState::new(&m);
            adam_step(&mut m, &g, &mut st, &cfg).unwrap();
            m.params_flat()
        };
        assert_eq!(run(AdamConfig::default()), run(AdamConfig::default()));
        let wd = AdamConfig {
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        assert_ne!(run(AdamConfig::default()), run(wd));
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut a = Mlp::new(small_spec(), 0).unwrap();
        let b = Mlp::new(MlpSpec::default(), 0).unwrap();
        let g = GradientSet::zeros_like(&b);
        let mut st = AdamState::new(&a);
        assert!(adam_step(&mut a, &g, &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_rejects_bad_files() {
        let m = Mlp::new(small_spec(), 0).unwrap();
        let mut c = m.to_checkpoint();
        c.params.pop();
        assert!(Mlp::from_checkpoint(&c).is_err());
        let mut c = m.to_checkpoint();
        c.version = 99;
        assert!(Mlp::from_checkpoint(&c).is_err());
        let mut c = m.to_checkpoint();
        c.layer_sizes[0] = 3;
        assert!(Mlp::from_checkpoint(&c).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>()) {
            let m = Mlp::new(small_spec(), seed).unwrap();
            let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
            let back = Mlp::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
            let a: Vec<u64> = m.params_flat().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params_flat().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
