//! Density of the log-SNR (in dB) seen during training.
//!
//! [`estimate_snr_pdf`] is the Monte-Carlo estimator: form `f_t` from the
//! sampler and loss weight, draw timesteps from it, push each through the
//! schedule's log-SNR and histogram the result. [`transform_density`] and
//! [`analytic_logsnr_density`] compute the same curve by change of variables
//! and serve as independent checks.
//!
//! The Monte-Carlo loop runs over fixed-size chunks, each with its own RNG
//! stream, and merges chunk statistics in chunk order, so results do not
//! depend on how many threads execute it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::schedules::{NoiseSchedule, ScheduleKind, SnrQuery};
use crate::timestep_dist::{combine, CombinedDensity, LossWeightFn, TimestepSampler, DEFAULT_GRID_SIZE};

pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_RANGE_DB: (f64, f64) = (-60.0, 60.0);
pub const MIN_SAMPLES: usize = 10_000;
pub const MIN_BINS: usize = 32;
/// Samples per Monte-Carlo chunk. Part of the reproducibility contract.
pub const CHUNK_SIZE: usize = 65_536;

/// How timesteps are turned into histogram mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorPath {
    /// Draw timesteps from `f_t` by inverse CDF; every sample has unit weight.
    #[default]
    Resample,
    /// Draw uniform timesteps and weight each by `f_l(u)·f_s(u)`.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdfOptions {
    pub n: usize,
    pub bins: usize,
    pub range_db: (f64, f64),
    pub grid_size: usize,
    pub path: EstimatorPath,
}

impl Default for PdfOptions {
    fn default() -> Self {
        PdfOptions {
            n: DEFAULT_SAMPLES,
            bins: DEFAULT_BINS,
            range_db: DEFAULT_RANGE_DB,
            grid_size: DEFAULT_GRID_SIZE,
            path: EstimatorPath::Resample,
        }
    }
}

impl PdfOptions {
    fn validate(&self) -> Result<()> {
        if self.n < MIN_SAMPLES {
            return Err(invalid(format!("need at least {MIN_SAMPLES} samples, got {}", self.n)));
        }
        if self.bins < MIN_BINS {
            return Err(invalid(format!("need at least {MIN_BINS} bins, got {}", self.bins)));
        }
        validate_range(self.range_db)
    }
}

fn validate_range((lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(invalid(format!("dB range must satisfy lo < hi, got ({lo}, {hi})")))
    }
}

fn uniform_edges((lo, hi): (f64, f64), bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

/// Binned log-SNR density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfEstimate {
    pub bin_edges: Vec<f64>,
    /// Normalised over retained samples.
    pub density: Vec<f64>,
    pub n_samples: usize,
    /// Samples whose log-SNR fell outside the bin range.
    pub n_dropped: usize,
    pub mean_db: f64,
    pub var_db: f64,
}

impl PdfEstimate {
    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    pub fn integral(&self) -> f64 {
        (0..self.bins()).map(|i| self.density[i] * self.bin_width(i)).sum()
    }

    pub fn retained_fraction(&self) -> f64 {
        1.0 - self.n_dropped as f64 / self.n_samples as f64
    }

    /// Probability mass of all samples inside `[lo, hi]` dB, counting dropped
    /// samples as outside every window. Partially covered bins contribute
    /// proportionally.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        let in_range: f64 = (0..self.bins())
            .map(|i| {
                let (a, b) = (self.bin_edges[i], self.bin_edges[i + 1]);
                let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                self.density[i] * overlap
            })
            .sum();
        in_range * self.retained_fraction()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdfSummary {
    pub mean_db: f64,
    pub var_db: f64,
    pub window_db: (f64, f64),
    pub mass_in_window: f64,
}

/// Moments of an estimate plus its mass inside a dB window.
pub fn pdf_summary(p: &PdfEstimate, window_db: (f64, f64)) -> PdfSummary {
    PdfSummary {
        mean_db: p.mean_db,
        var_db: p.var_db,
        window_db,
        mass_in_window: p.mass_in(window_db.0, window_db.1),
    }
}

/// Weighted histogram plus running moments (West's weighted Welford).
#[derive(Debug, Clone)]
struct Accumulator {
    weights: Vec<f64>,
    n: usize,
    n_dropped: usize,
    w_sum: f64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    fn new(bins: usize) -> Self {
        Accumulator {
            weights: vec![0.0; bins],
            n: 0,
            n_dropped: 0,
            w_sum: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn add(&mut self, y: f64, w: f64, (lo, hi): (f64, f64)) {
        self.n += 1;
        if !(y >= lo && y <= hi) {
            self.n_dropped += 1;
            return;
        }
        let bins = self.weights.len();
        let idx = (((y - lo) / (hi - lo)) * bins as f64) as usize;
        self.weights[idx.min(bins - 1)] += w;
        if w > 0.0 {
            self.w_sum += w;
            let delta = y - self.mean;
            self.mean += delta * (w / self.w_sum);
            self.m2 += w * delta * (y - self.mean);
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        self.n += other.n;
        self.n_dropped += other.n_dropped;
        if other.w_sum == 0.0 {
            return;
        }
        let total = self.w_sum + other.w_sum;
        let delta = other.mean - self.mean;
        self.mean += delta * (other.w_sum / total);
        self.m2 += other.m2 + delta * delta * self.w_sum * other.w_sum / total;
        self.w_sum = total;
    }
}

/// Monte-Carlo estimate of the training-time log-SNR density.
pub fn estimate_snr_pdf(
    schedule: &NoiseSchedule,
    sampler: &TimestepSampler,
    weight: &LossWeightFn,
    q: &SnrQuery,
    opts: &PdfOptions,
    seed: u64,
) -> Result<PdfEstimate> {
    opts.validate()?;
    q.validate()?;
    let f_t = combine(weight, sampler, opts.grid_size)?;
    let range = opts.range_db;
    let eps = sampler.epsilon();
    let n_chunks = opts.n.div_ceil(CHUNK_SIZE);

    let chunks = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let len = CHUNK_SIZE.min(opts.n - k * CHUNK_SIZE);
            let mut rng = rng::stream(seed, rng::streams::CHUNK_BASE + k as u64);
            let mut acc = Accumulator::new(opts.bins);
            for _ in 0..len {
                let (u, w) = match opts.path {
                    EstimatorPath::Resample => (f_t.quantile(rng.random::<f64>()), 1.0),
                    EstimatorPath::Weighted => {
                        let u = eps + (1.0 - 2.0 * eps) * rng.random::<f64>();
                        (u, weight.weight_at(u) * sampler.density_at(u)?)
                    }
                };
                acc.add(schedule.log_snr_db(u, q)?, w, range);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = Accumulator::new(opts.bins);
    for c in &chunks {
        total.merge(c);
    }
    let retained: f64 = total.weights.iter().sum();
    if retained.is_nan() || retained <= 0.0 {
        return Err(Error::DegenerateDensity(format!(
            "no samples fell inside [{}, {}] dB",
            range.0, range.1
        )));
    }
    let bin_edges = uniform_edges(range, opts.bins);
    let density = total
        .weights
        .iter()
        .enumerate()
        .map(|(i, w)| w / (retained * (bin_edges[i + 1] - bin_edges[i])))
        .collect();
    Ok(PdfEstimate {
        bin_edges,
        density,
        n_samples: total.n,
        n_dropped: total.n_dropped,
        mean_db: total.mean,
        var_db: (total.m2 / total.w_sum).max(0.0),
    })
}

/// Closed-form log-SNR density for the linear flow.
///
/// `y(u) = c + 20·log10(u/(1−u))` inverts to `u = 1/(1 + 10^{−(y−c)/20})`
/// with `du/dy = ln(10)·u(1−u)/20`.
pub fn analytic_logsnr_density(
    schedule: &NoiseSchedule,
    f_t: &CombinedDensity,
    q: &SnrQuery,
    y: f64,
) -> Result<f64> {
    if schedule.kind() != ScheduleKind::FlowLinear {
        return Err(Error::UnsupportedSchedule(schedule.kind()));
    }
    q.validate()?;
    let u = 1.0 / (1.0 + 10f64.powf(-(y - q.offset_db()) / 20.0));
    let du_dy = std::f64::consts::LN_10 * u * (1.0 - u) / 20.0;
    Ok(f_t.density_at(u) * du_dy)
}

/// A log-SNR density obtained by change of variables, binned like
/// [`PdfEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub bin_edges: Vec<f64>,
    /// Unnormalised: integrates to `retained_mass`.
    pub density: Vec<f64>,
    /// Mass of `f_t` that maps inside the bin range.
    pub retained_mass: f64,
}

impl DensityCurve {
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect()
    }

    /// Density conditioned on landing in range, comparable with [`PdfEstimate::density`].
    pub fn normalized(&self) -> Vec<f64> {
        self.density.iter().map(|d| d / self.retained_mass).collect()
    }

    pub fn mean_db(&self) -> f64 {
        let c = self.centers();
        (0..c.len())
            .map(|i| c[i] * self.density[i] * (self.bin_edges[i + 1] - self.bin_edges[i]))
            .sum::<f64>()
            / self.retained_mass
    }
}

/// Numerical change of variables for any schedule with a monotone log-SNR map.
///
/// Each bin gets `(F_t(g⁻¹(y_hi)) − F_t(g⁻¹(y_lo))) / width`, where `g⁻¹` is
/// the generalised inverse found by bisection. The exact `f_t` CDF makes this
/// valid for the step-shaped DDPM maps too.
pub fn transform_density(
    f_t: &CombinedDensity,
    schedule: &NoiseSchedule,
    q: &SnrQuery,
    bins: usize,
    range_db: (f64, f64),
) -> Result<DensityCurve> {
    if bins == 0 {
        return Err(invalid("transform_density needs at least one bin"));
    }
    validate_range(range_db)?;
    q.validate()?;
    let g = |u: f64| schedule.log_snr_db(u, q);

    let grid = f_t.grid();
    let mut prev = g(grid[0])?;
    for &u in &grid[1..] {
        let y = g(u)?;
        if y < prev {
            return Err(Error::NonMonotone { u });
        }
        prev = y;
    }

    let (u_lo, u_hi) = f_t.support();
    let (g_lo, g_hi) = (g(u_lo)?, g(u_hi)?);
    // P(g(U) ≤ y) for U ~ f_t.
    let cdf_y = |y: f64| -> Result<f64> {
        if y < g_lo {
            return Ok(0.0);
        }
        if y >= g_hi {
            return Ok(1.0);
        }
        let (mut a, mut b) = (u_lo, u_hi);
        loop {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if g(m)? <= y {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(f_t.cdf_at(a))
    };

    let bin_edges = uniform_edges(range_db, bins);
    let cdfs = bin_edges.iter().map(|&y| cdf_y(y)).collect::<Result<Vec<_>>>()?;
    let density = (0..bins)
        .map(|i| (cdfs[i + 1] - cdfs[i]) / (bin_edges[i + 1] - bin_edges[i]))
        .collect();
    Ok(DensityCurve {
        retained_mass: cdfs[bins] - cdfs[0],
        bin_edges,
        density,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_ft() -> CombinedDensity {
        combine(&LossWeightFn::Uniform, &TimestepSampler::uniform(), DEFAULT_GRID_SIZE).unwrap()
    }

    fn small_opts() -> PdfOptions {
        PdfOptions {
            n: 200_000,
            ..PdfOptions::default()
        }
    }

    #[test]
    fn analytic_density_at_zero() {
        let d = analytic_logsnr_density(
            &NoiseSchedule::flow_linear(),
            &uniform_ft(),
            &SnrQuery::default(),
            0.0,
        )
        .unwrap();
        // du/dy at u = 1/2 is ln(10)/80; f_t = 1/(1 − 2ε).
        let oracle = std::f64::consts::LN_10 / 80.0 / (1.0 - 2e-5);
        assert!((d - oracle).abs() < 1e-12);
        assert!((d - 0.02878).abs() < 1e-5);
    }

    #[test]
    fn analytic_density_symmetry_and_shift() {
        let s = NoiseSchedule::flow_linear();
        let f = uniform_ft();
        let q1 = SnrQuery::default();
        let q2 = SnrQuery::with_std(2.0).unwrap();
        let shift = 20.0 * 2f64.log10();
        for y in [-40.0, -7.5, 3.0, 25.0] {
            let a = analytic_logsnr_density(&s, &f, &q1, y).unwrap();
            let b = analytic_logsnr_density(&s, &f, &q1, -y).unwrap();
            assert!((a - b).abs() < 1e-12);
            let c = analytic_logsnr_density(&s, &f, &q2, y + shift).unwrap();
            assert!((a - c).abs() < 1e-12);
        }
        assert!((shift - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn analytic_density_rejects_other_schedules() {
        let f = uniform_ft();
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::DdpmCosine, ScheduleKind::FlowCosine] {
            let r = analytic_logsnr_density(&NoiseSchedule::new(kind), &f, &SnrQuery::default(), 0.0);
            assert!(matches!(r, Err(Error::UnsupportedSchedule(k)) if k == kind));
        }
    }

    #[test]
    fn transform_is_symmetric_for_flow_linear() {
        let q = SnrQuery::with_std(1.7).unwrap();
        let centre = 20.0 * 1.7f64.log10();
        let c = transform_density(
            &uniform_ft(),
            &NoiseSchedule::flow_linear(),
            &q,
            400,
            (centre - 50.0, centre + 50.0),
        )
        .unwrap();
        let n = c.density.len();
        for i in 0..n / 2 {
            assert!((c.density[i] - c.density[n - 1 - i]).abs() < 1e-9);
        }
        assert!((c.mean_db() - centre).abs() < 1e-9);
    }

    #[test]
    fn transform_agrees_with_analytic() {
        let s = NoiseSchedule::flow_linear();
        let f = combine(
            &LossWeightFn::Uniform,
            &TimestepSampler::logit_normal(0.0, 1.0).unwrap(),
            DEFAULT_GRID_SIZE,
        )
        .unwrap();
        let q = SnrQuery::default();
        let c = transform_density(&f, &s, &q, 2048, (-60.0, 60.0)).unwrap();
        let err = c
            .centers()
            .iter()
            .zip(&c.density)
            .map(|(&y, &d)| (d - analytic_logsnr_density(&s, &f, &q, y).unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn transform_mass_is_conserved() {
        for kind in ScheduleKind::ALL {
            let c = transform_density(
                &uniform_ft(),
                &NoiseSchedule::new(kind),
                &SnrQuery::default(),
                256,
                (-150.0, 150.0),
            )
            .unwrap();
            assert!((c.retained_mass - 1.0).abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn estimate_is_normalised_and_counts_drops() {
        let e = estimate_snr_pdf(
            &NoiseSchedule::flow_linear(),
            &TimestepSampler::uniform(),
            &LossWeightFn::Uniform,
            &SnrQuery::default(),
            &small_opts(),
            11,
        )
        .unwrap();
        assert!((e.integral() - 1.0).abs() < 1e-9);
        assert_eq!(e.n_samples, 200_000);
        // About 0.2% of uniform u lands beyond ±60 dB on the linear flow.
        assert!(e.n_dropped > 0 && e.n_dropped < 1000);
        assert!((e.mass_in(f64::NEG_INFINITY, f64::INFINITY) - e.retained_fraction()).abs() < 1e-12);
        assert!(e.mean_db.abs() < 0.3);
    }

    #[test]
    fn estimate_is_deterministic() {
        let run = |seed| {
            estimate_snr_pdf(
                &NoiseSchedule::new(ScheduleKind::DdpmCosine),
                &TimestepSampler::logit_normal(0.0, 1.0).unwrap(),
                &LossWeightFn::Uniform,
                &SnrQuery::default(),
                &small_opts(),
                seed,
            )
            .unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn estimate_independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    estimate_snr_pdf(
                        &NoiseSchedule::flow_cosine(),
                        &TimestepSampler::uniform(),
                        &LossWeightFn::Uniform,
                        &SnrQuery::default(),
                        &small_opts(),
                        3,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn weighted_path_agrees_with_resampling() {
        let s = NoiseSchedule::flow_linear();
        let sampler = TimestepSampler::logit_normal(0.0, 1.0).unwrap();
        let q = SnrQuery::default();
        let mut opts = small_opts();
        opts.n = 1_000_000;
        let a = estimate_snr_pdf(&s, &sampler, &LossWeightFn::Uniform, &q, &opts, 1).unwrap();
        opts.path = EstimatorPath::Weighted;
        let b = estimate_snr_pdf(&s, &sampler, &LossWeightFn::Uniform, &q, &opts, 2).unwrap();
        let err = a
            .density
            .iter()
            .zip(&b.density)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "{err}");
        assert!((a.mean_db - b.mean_db).abs() < 0.1);
        assert!((a.var_db / b.var_db - 1.0).abs() < 0.02);
    }

    #[test]
    fn lognorm_concentrates_the_pdf() {
        let s = NoiseSchedule::flow_linear();
        let q = SnrQuery::default();
        let opts = small_opts();
        let uni = estimate_snr_pdf(&s, &TimestepSampler::uniform(), &LossWeightFn::Uniform, &q, &opts, 0).unwrap();
        let ln = estimate_snr_pdf(
            &s,
            &TimestepSampler::logit_normal(0.0, 1.0).unwrap(),
            &LossWeightFn::Uniform,
            &q,
            &opts,
            0,
        )
        .unwrap();
        assert!(ln.var_db < uni.var_db);
        let lo = pdf_summary(&ln, (-10.0, 10.0));
        let hi = pdf_summary(&uni, (-10.0, 10.0));
        assert!(lo.mass_in_window > hi.mass_in_window);
    }

    #[test]
    fn bad_options_are_rejected() {
        let s = NoiseSchedule::flow_linear();
        let sampler = TimestepSampler::uniform();
        let q = SnrQuery::default();
        let w = LossWeightFn::Uniform;
        for opts in [
            PdfOptions { n: 100, ..PdfOptions::default() },
            PdfOptions { bins: 8, ..PdfOptions::default() },
            PdfOptions { range_db: (5.0, -5.0), ..PdfOptions::default() },
        ] {
            assert!(matches!(
                estimate_snr_pdf(&s, &sampler, &w, &q, &opts, 0),
                Err(Error::InvalidParameter(_))
            ));
        }
        let zero = LossWeightFn::tabulated(vec![(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(matches!(
            estimate_snr_pdf(&s, &sampler, &zero, &q, &small_opts(), 0),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let ys: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let range = (-60.0, 60.0);
        let mut whole = Accumulator::new(32);
        ys.iter().for_each(|&y| whole.add(y, 1.0, range));
        let mut a = Accumulator::new(32);
        let mut b = Accumulator::new(32);
        ys[..300].iter().for_each(|&y| a.add(y, 1.0, range));
        ys[300..].iter().for_each(|&y| b.add(y, 1.0, range));
        a.merge(&b);
        assert_eq!(a.weights, whole.weights);
        assert!((a.mean - whole.mean).abs() < 1e-12);
        assert!((a.m2 / a.w_sum - whole.m2 / whole.w_sum).abs() < 1e-9);
    }
}
