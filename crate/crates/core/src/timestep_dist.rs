//! Timestep samplers `f_s`, loss weights `f_l` and their normalised product `f_t`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_EPSILON_CLIP: f64 = 1e-5;
pub const DEFAULT_GRID_SIZE: usize = 4096;
pub const MIN_GRID_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerKind {
    Uniform,
    LogitNormal { mu: f64, sigma: f64 },
}

/// Density timesteps are drawn from during training. Draws are clipped to
/// `[ε, 1 − ε]`.
///
/// Serialises as `"uniform"` or `"lognorm(mu,sigma)"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestepSampler {
    kind: SamplerKind,
    epsilon_clip: f64,
}

impl TimestepSampler {
    pub fn uniform() -> Self {
        TimestepSampler {
            kind: SamplerKind::Uniform,
            epsilon_clip: DEFAULT_EPSILON_CLIP,
        }
    }

    pub fn logit_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid(format!("lognorm mu must be finite, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("lognorm sigma must be positive, got {sigma}")));
        }
        Ok(TimestepSampler {
            kind: SamplerKind::LogitNormal { mu, sigma },
            epsilon_clip: DEFAULT_EPSILON_CLIP,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(invalid(format!("epsilon clip must lie in (0, 0.5), got {epsilon}")));
        }
        self.epsilon_clip = epsilon;
        Ok(self)
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon_clip
    }

    /// `n` seeded draws in `[ε, 1 − ε]`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let eps = self.epsilon_clip;
        match self.kind {
            SamplerKind::Uniform => eps + (1.0 - 2.0 * eps) * rng.random::<f64>(),
            SamplerKind::LogitNormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigmoid(mu + sigma * z).clamp(eps, 1.0 - eps)
            }
        }
    }

    /// Analytic density of the unclipped sampler at `u ∈ (0, 1)`.
    pub fn density_at(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain { what: "u", value: u });
        }
        Ok(match self.kind {
            SamplerKind::Uniform => 1.0,
            SamplerKind::LogitNormal { mu, sigma } => {
                let z = (logit(u) - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt() * u * (1.0 - u))
            }
        })
    }
}

impl Default for TimestepSampler {
    fn default() -> Self {
        TimestepSampler::uniform()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

impl fmt::Display for TimestepSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SamplerKind::Uniform => f.write_str("uniform"),
            SamplerKind::LogitNormal { mu, sigma } => write!(f, "lognorm({mu},{sigma})"),
        }
    }
}

impl FromStr for TimestepSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(TimestepSampler::uniform());
        }
        let args = s
            .strip_prefix("lognorm(")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| invalid(format!("unknown sampler '{s}' (expected uniform or lognorm(mu,sigma))")))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let [mu, sigma] = parts.as_slice() else {
            return Err(invalid(format!("lognorm takes two arguments, got '{args}'")));
        };
        let parse = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| invalid(format!("bad lognorm argument '{x}'")))
        };
        TimestepSampler::logit_normal(parse(mu)?, parse(sigma)?)
    }
}

impl Serialize for TimestepSampler {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimestepSampler {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-timestep loss weight `f_l(u)`.
///
/// `Tabulated` interpolates linearly between knots and holds the end values
/// outside the table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossWeightFn {
    #[default]
    Uniform,
    Tabulated { table: Vec<(f64, f64)> },
}

impl LossWeightFn {
    pub fn tabulated(table: Vec<(f64, f64)>) -> Result<Self> {
        let w = LossWeightFn::Tabulated { table };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let LossWeightFn::Tabulated { table } = self else {
            return Ok(());
        };
        if table.is_empty() {
            return Err(invalid("weight table is empty"));
        }
        if table.iter().any(|&(u, w)| !u.is_finite() || !(w >= 0.0 && w.is_finite())) {
            return Err(invalid("weight table needs finite u and non-negative finite weights"));
        }
        if table.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(invalid("weight table u values must be strictly increasing"));
        }
        Ok(())
    }

    pub fn weight_at(&self, u: f64) -> f64 {
        match self {
            LossWeightFn::Uniform => 1.0,
            LossWeightFn::Tabulated { table } => {
                let first = table[0];
                let last = table[table.len() - 1];
                if u <= first.0 {
                    return first.1;
                }
                if u >= last.0 {
                    return last.1;
                }
                let j = table.partition_point(|&(x, _)| x <= u);
                let (x0, w0) = table[j - 1];
                let (x1, w1) = table[j];
                w0 + (w1 - w0) * (u - x0) / (x1 - x0)
            }
        }
    }

    /// Same weights multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            LossWeightFn::Uniform => LossWeightFn::Uniform,
            LossWeightFn::Tabulated { table } => LossWeightFn::Tabulated {
                table: table.iter().map(|&(u, w)| (u, w * k)).collect(),
            },
        }
    }
}

/// Piecewise-linear density on a grid over `[ε, 1 − ε]`, normalised so its
/// trapezoidal integral is one. Zero outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedDensity {
    grid: Vec<f64>,
    density: Vec<f64>,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl CombinedDensity {
    /// Normalises `values` sampled on `grid` into a density.
    pub fn from_values(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if grid.len() < 2 {
            return Err(invalid("density grid needs at least two points"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 || grid[grid.len() - 1] >= 1.0 {
            return Err(invalid("density grid must be strictly increasing inside (0, 1)"));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::DegenerateDensity(
                "density values must be finite and non-negative".into(),
            ));
        }
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..grid.len() {
            acc += 0.5 * (values[i - 1] + values[i]) * (grid[i] - grid[i - 1]);
            cdf.push(acc);
        }
        if acc.is_nan() || acc <= 0.0 {
            return Err(Error::DegenerateDensity(
                "f_l·f_s integrates to zero".into(),
            ));
        }
        let density = values.iter().map(|v| v / acc).collect();
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(CombinedDensity { grid, density, cdf })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn support(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    /// Trapezoidal integral of the stored density.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(g, d)| 0.5 * (d[0] + d[1]) * (g[1] - g[0]))
            .sum()
    }

    fn segment(&self, u: f64) -> Option<usize> {
        let (lo, hi) = self.support();
        if !(u >= lo && u <= hi) {
            return None;
        }
        let j = self.grid.partition_point(|&g| g <= u);
        Some(j.clamp(1, self.grid.len() - 1))
    }

    /// Density at `u` by linear interpolation.
    pub fn density_at(&self, u: f64) -> f64 {
        let Some(j) = self.segment(u) else {
            return 0.0;
        };
        let (x0, x1) = (self.grid[j - 1], self.grid[j]);
        let (d0, d1) = (self.density[j - 1], self.density[j]);
        d0 + (d1 - d0) * (u - x0) / (x1 - x0)
    }

    /// Exact CDF of the piecewise-linear density.
    pub fn cdf_at(&self, u: f64) -> f64 {
        let (lo, hi) = self.support();
        if u <= lo {
            return 0.0;
        }
        if u >= hi {
            return 1.0;
        }
        let j = self.segment(u).expect("inside support");
        let x0 = self.grid[j - 1];
        let h = self.grid[j] - x0;
        let (d0, d1) = (self.density[j - 1], self.density[j]);
        let s = u - x0;
        self.cdf[j - 1] + d0 * s + (d1 - d0) * s * s / (2.0 * h)
    }

    /// Inverse CDF. Flat stretches resolve to their left edge.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let j = self.cdf.partition_point(|&c| c < p);
        if j == 0 {
            return self.grid[0];
        }
        if j >= self.grid.len() {
            return self.grid[self.grid.len() - 1];
        }
        let x0 = self.grid[j - 1];
        let h = self.grid[j] - x0;
        let (d0, d1) = (self.density[j - 1], self.density[j]);
        let mass = p - self.cdf[j - 1];
        // Solve d0·s + a·s² = mass on the segment, a = (d1 − d0)/(2h).
        let a = (d1 - d0) / (2.0 * h);
        let disc = (d0 * d0 + 4.0 * a * mass).max(0.0);
        let denom = d0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * mass / denom } else { 0.0 };
        x0 + s.clamp(0.0, h)
    }

    /// `n` inverse-CDF draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}

/// Normalised `f_l·f_s` on a uniform `grid_size`-point grid over `[ε, 1 − ε]`.
pub fn combine(
    weight: &LossWeightFn,
    sampler: &TimestepSampler,
    grid_size: usize,
) -> Result<CombinedDensity> {
    if grid_size < MIN_GRID_SIZE {
        return Err(invalid(format!("grid_size must be at least {MIN_GRID_SIZE}, got {grid_size}")));
    }
    weight.validate()?;
    let eps = sampler.epsilon();
    let width = 1.0 - 2.0 * eps;
    let last = (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { 1.0 - eps } else { eps + width * i as f64 / last })
        .collect();
    let values = grid
        .iter()
        .map(|&u| Ok(weight.weight_at(u) * sampler.density_at(u)?))
        .collect::<Result<Vec<f64>>>()?;
    CombinedDensity::from_values(grid, values)
}
