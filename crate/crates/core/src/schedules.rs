//! Noise schedules and the signal-to-noise quantities derived from them.
//!
//! All schedules share one time axis `u ∈ (0, 1)`: `u → 1` is clean data and
//! `u → 0` is pure noise, so `x_u = α(u)·x + σ(u)·ε`. Discrete DDPM schedules
//! map `u` onto step `i = round((1 − u)(T − 1))`, step 0 being the least noisy.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_DDPM_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
const MAX_COSINE_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    DdpmLinear,
    DdpmCosine,
    FlowLinear,
    FlowCosine,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::DdpmLinear,
        ScheduleKind::DdpmCosine,
        ScheduleKind::FlowLinear,
        ScheduleKind::FlowCosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::DdpmLinear => "ddpm-linear",
            ScheduleKind::DdpmCosine => "ddpm-cosine",
            ScheduleKind::FlowLinear => "flow-linear",
            ScheduleKind::FlowCosine => "flow-cosine",
        }
    }

    pub fn is_flow(self) -> bool {
        matches!(self, ScheduleKind::FlowLinear | ScheduleKind::FlowCosine)
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown schedule '{s}' (expected ddpm-linear, ddpm-cosine, flow-linear or flow-cosine)"
                ))
            })
    }
}

/// A named `(α, σ)` curve over unit time.
///
/// DDPM kinds precompute `ᾱ_i` for every discrete step; flow kinds are closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
    cosine_offset: f64,
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule of the given kind with default parameters.
    pub fn new(kind: ScheduleKind) -> Self {
        match kind {
            ScheduleKind::DdpmLinear => {
                Self::ddpm_linear(DEFAULT_DDPM_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
                    .expect("default ddpm-linear parameters are valid")
            }
            ScheduleKind::DdpmCosine => {
                Self::ddpm_cosine(DEFAULT_DDPM_STEPS, DEFAULT_COSINE_OFFSET)
                    .expect("default ddpm-cosine parameters are valid")
            }
            ScheduleKind::FlowLinear | ScheduleKind::FlowCosine => Self::flow(kind),
        }
    }

    pub fn flow_linear() -> Self {
        Self::flow(ScheduleKind::FlowLinear)
    }

    pub fn flow_cosine() -> Self {
        Self::flow(ScheduleKind::FlowCosine)
    }

    fn flow(kind: ScheduleKind) -> Self {
        NoiseSchedule {
            kind,
            num_steps: 0,
            beta_start: 0.0,
            beta_end: 0.0,
            cosine_offset: 0.0,
            alphas_cumprod: Vec::new(),
        }
    }

    /// DDPM with betas linear in the step index from `beta_start` to `beta_end`.
    pub fn ddpm_linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps < 2 {
            return Err(invalid("ddpm schedules need at least 2 steps"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let last = (num_steps - 1) as f64;
        let betas = (0..num_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / last);
        Ok(NoiseSchedule {
            kind: ScheduleKind::DdpmLinear,
            num_steps,
            beta_start,
            beta_end,
            cosine_offset: 0.0,
            alphas_cumprod: cumulative_alphas(betas),
        })
    }

    /// DDPM with the squared-cosine `ᾱ` curve and per-step betas clipped at 0.999.
    pub fn ddpm_cosine(num_steps: usize, offset: f64) -> Result<Self> {
        if num_steps < 2 {
            return Err(invalid("ddpm schedules need at least 2 steps"));
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(invalid(format!("cosine offset must be positive, got {offset}")));
        }
        let t = num_steps as f64;
        let abar = |x: f64| ((x + offset) / (1.0 + offset) * FRAC_PI_2).cos().powi(2);
        let betas = (0..num_steps).map(|i| {
            let beta = 1.0 - abar((i + 1) as f64 / t) / abar(i as f64 / t);
            beta.min(MAX_COSINE_BETA)
        });
        Ok(NoiseSchedule {
            kind: ScheduleKind::DdpmCosine,
            num_steps,
            beta_start: 0.0,
            beta_end: 0.0,
            cosine_offset: offset,
            alphas_cumprod: cumulative_alphas(betas),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of discrete steps (0 for continuous flows).
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    pub fn cosine_offset(&self) -> f64 {
        self.cosine_offset
    }

    /// `ᾱ_i` for DDPM kinds, empty for flows.
    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    /// Discrete step for unit time `u` (DDPM kinds only).
    pub fn ddpm_index(&self, u: f64) -> Option<usize> {
        if self.kind.is_flow() {
            return None;
        }
        let i = ((1.0 - u) * (self.num_steps - 1) as f64).round() as usize;
        Some(i.min(self.num_steps - 1))
    }

    /// `(α(u), σ(u))`.
    pub fn alpha_sigma(&self, u: f64) -> Result<(f64, f64)> {
        check_unit(u)?;
        Ok(match self.kind {
            ScheduleKind::FlowLinear => (u, 1.0 - u),
            ScheduleKind::FlowCosine => {
                let angle = FRAC_PI_2 * (1.0 - u);
                (angle.cos(), angle.sin())
            }
            ScheduleKind::DdpmLinear | ScheduleKind::DdpmCosine => {
                let i = self.ddpm_index(u).expect("ddpm kind");
                let abar = self.alphas_cumprod[i];
                (abar.sqrt(), (1.0 - abar).sqrt())
            }
        })
    }

    /// `(dα/du, dσ/du)` for the continuous flows; the velocity target is
    /// `dα/du·x + dσ/du·ε`.
    pub fn flow_derivatives(&self, u: f64) -> Result<(f64, f64)> {
        check_unit(u)?;
        match self.kind {
            ScheduleKind::FlowLinear => Ok((1.0, -1.0)),
            ScheduleKind::FlowCosine => {
                let angle = FRAC_PI_2 * (1.0 - u);
                Ok((FRAC_PI_2 * angle.sin(), -FRAC_PI_2 * angle.cos()))
            }
            kind => Err(Error::UnsupportedSchedule(kind)),
        }
    }

    /// Relative SNR `α²/σ²`, independent of the data.
    pub fn snr_relative(&self, u: f64) -> Result<f64> {
        let (alpha, sigma) = self.alpha_sigma(u)?;
        if sigma == 0.0 {
            return Err(Error::InfiniteSnr { u });
        }
        Ok((alpha * alpha) / (sigma * sigma))
    }

    /// Data-dependent log-SNR in dB:
    /// `10·log10 C(I) + 20·log10 std + 10·log10(α²/σ²)`.
    pub fn log_snr_db(&self, u: f64, q: &SnrQuery) -> Result<f64> {
        let snr = self.snr_relative(u)?;
        Ok(q.offset_db() + 10.0 * snr.log10())
    }
}

fn cumulative_alphas(betas: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 1.0;
    betas
        .map(|beta| {
            acc *= 1.0 - beta;
            acc
        })
        .collect()
}

fn check_unit(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { what: "u", value: u })
    }
}

/// Data-dependent part of the SNR: the data std after scaling and the
/// image constant `C(I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrQuery {
    pub std: f64,
    #[serde(default = "one")]
    pub c_of_i: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SnrQuery {
    fn default() -> Self {
        SnrQuery { std: 1.0, c_of_i: 1.0 }
    }
}

impl SnrQuery {
    pub fn new(std: f64, c_of_i: f64) -> Result<Self> {
        let q = SnrQuery { std, c_of_i };
        q.validate()?;
        Ok(q)
    }

    pub fn with_std(std: f64) -> Result<Self> {
        Self::new(std, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(invalid(format!("std must be positive, got {}", self.std)));
        }
        if !(self.c_of_i > 0.0 && self.c_of_i.is_finite()) {
            return Err(invalid(format!("C(I) must be positive, got {}", self.c_of_i)));
        }
        Ok(())
    }

    /// dB shift shared by every timestep: `10·log10 C + 20·log10 std`.
    pub fn offset_db(&self) -> f64 {
        10.0 * self.c_of_i.log10() + 20.0 * self.std.log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn flow_midpoints() {
        let (a, s) = NoiseSchedule::flow_linear().alpha_sigma(0.5).unwrap();
        assert_eq!((a, s), (0.5, 0.5));
        let (a, s) = NoiseSchedule::flow_cosine().alpha_sigma(0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(a, h, 1e-15) && close(s, h, 1e-15));
    }

    #[test]
    fn ddpm_linear_least_noisy_step() {
        // Oracle: the first cumulative product is a single factor 1 - beta_0.
        let abar0: f64 = 1.0 - 1e-4;
        let sched = NoiseSchedule::new(ScheduleKind::DdpmLinear);
        let u = 1.0 - 1e-9;
        assert_eq!(sched.ddpm_index(u), Some(0));
        let (a, s) = sched.alpha_sigma(u).unwrap();
        assert!(close(a, abar0.sqrt(), 1e-15));
        assert!(close(s, 0.01, 1e-12));
    }

    #[test]
    fn ddpm_linear_matches_direct_product() {
        let sched = NoiseSchedule::new(ScheduleKind::DdpmLinear);
        let mut prod = 1.0;
        for i in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
            assert!(close(sched.alphas_cumprod()[i], prod, 1e-15));
        }
    }

    #[test]
    fn ddpm_cosine_clips_last_beta() {
        let sched = NoiseSchedule::new(ScheduleKind::DdpmCosine);
        let ac = sched.alphas_cumprod();
        let last_beta = 1.0 - ac[999] / ac[998];
        assert!(close(last_beta, 0.999, 1e-12));
        assert!(ac.windows(2).all(|w| w[1] < w[0]));
        assert!(ac[0] < 1.0 && ac[0] > 0.9999);
    }

    #[test]
    fn relative_snr_examples() {
        let fl = NoiseSchedule::flow_linear();
        assert_eq!(fl.snr_relative(0.5).unwrap(), 1.0);
        assert!(close(fl.snr_relative(0.75).unwrap(), 9.0, 1e-12));
        assert!(close(NoiseSchedule::flow_cosine().snr_relative(0.5).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn log_snr_examples() {
        let fl = NoiseSchedule::flow_linear();
        let q1 = SnrQuery::default();
        assert_eq!(fl.log_snr_db(0.5, &q1).unwrap(), 0.0);
        let q2 = SnrQuery::with_std(2.0).unwrap();
        assert!(close(fl.log_snr_db(0.5, &q2).unwrap(), 6.0206, 1e-4));
        // 10·log10(81)
        assert!(close(fl.log_snr_db(0.9, &q1).unwrap(), 19.084850188786497, 1e-9));
    }

    #[test]
    fn endpoints_are_rejected() {
        for kind in ScheduleKind::ALL {
            let s = NoiseSchedule::new(kind);
            for u in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
                assert!(matches!(s.alpha_sigma(u), Err(Error::Domain { .. })));
                assert!(s.log_snr_db(u, &SnrQuery::default()).is_err());
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ScheduleKind::ALL {
            assert_eq!(kind.name().parse::<ScheduleKind>().unwrap(), kind);
        }
        assert!("ddpm".parse::<ScheduleKind>().is_err());
    }

    #[test]
    fn bad_query_rejected() {
        assert!(SnrQuery::new(0.0, 1.0).is_err());
        assert!(SnrQuery::new(1.0, -1.0).is_err());
    }

    #[test]
    fn flow_derivatives_match_finite_differences() {
        for s in [NoiseSchedule::flow_linear(), NoiseSchedule::flow_cosine()] {
            for u in [0.1, 0.37, 0.8] {
                let h = 1e-6;
                let (ap, sp) = s.alpha_sigma(u + h).unwrap();
                let (am, sm) = s.alpha_sigma(u - h).unwrap();
                let (da, ds) = s.flow_derivatives(u).unwrap();
                assert!(close(da, (ap - am) / (2.0 * h), 1e-8));
                assert!(close(ds, (sp - sm) / (2.0 * h), 1e-8));
            }
        }
        assert!(NoiseSchedule::new(ScheduleKind::DdpmLinear)
            .flow_derivatives(0.5)
            .is_err());
    }

    fn any_kind() -> impl Strategy<Value = ScheduleKind> {
        prop::sample::select(ScheduleKind::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn coefficients_are_valid(kind in any_kind(), u in 1e-6f64..(1.0 - 1e-6)) {
            let (a, s) = NoiseSchedule::new(kind).alpha_sigma(u).unwrap();
            prop_assert!(a >= 0.0 && s >= 0.0 && (a, s) != (0.0, 0.0));
            match kind {
                ScheduleKind::FlowLinear => prop_assert_eq!(a + s, 1.0),
                _ => prop_assert!((a * a + s * s - 1.0).abs() < 1e-12),
            }
        }

        #[test]
        fn coefficients_are_monotone(kind in any_kind(), u1 in 1e-6f64..0.999, du in 1e-6f64..1e-3) {
            let s = NoiseSchedule::new(kind);
            let u2 = (u1 + du).min(1.0 - 1e-7);
            let (a1, s1) = s.alpha_sigma(u1).unwrap();
            let (a2, s2) = s.alpha_sigma(u2).unwrap();
            prop_assert!(a2 >= a1 && s2 <= s1);
        }

        #[test]
        fn std_shift_is_additive(kind in any_kind(), u in 1e-5f64..(1.0 - 1e-5), std in 0.05f64..20.0, c in 0.1f64..10.0) {
            let s = NoiseSchedule::new(kind);
            let base = s.log_snr_db(u, &SnrQuery::new(1.0, c).unwrap()).unwrap();
            let shifted = s.log_snr_db(u, &SnrQuery::new(std, c).unwrap()).unwrap();
            prop_assert!((shifted - base - 20.0 * std.log10()).abs() < 1e-9);
        }

        #[test]
        fn flow_relative_snr_strictly_increasing(cosine in any::<bool>(), u1 in 1e-5f64..0.99, du in 1e-4f64..0.009) {
            let s = if cosine { NoiseSchedule::flow_cosine() } else { NoiseSchedule::flow_linear() };
            prop_assert!(s.snr_relative(u1).unwrap() < s.snr_relative(u1 + du).unwrap());
        }
    }

    #[test]
    fn ddpm_relative_snr_increases_across_steps() {
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::DdpmCosine] {
            let s = NoiseSchedule::new(kind);
            // One point per discrete step: strictly increasing once u crosses a step.
            let snrs: Vec<f64> = (0..999)
                .map(|i| s.snr_relative(1.0 - i as f64 / 999.0 - 1e-9).unwrap())
                .collect();
            assert!(snrs.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn ddpm_unit_norm_every_step() {
        for kind in [ScheduleKind::DdpmLinear, ScheduleKind::DdpmCosine] {
            for &abar in NoiseSchedule::new(kind).alphas_cumprod() {
                let n = abar.sqrt().powi(2) + (1.0 - abar).sqrt().powi(2);
                assert!(close(n, 1.0, 1e-12));
            }
        }
    }
}
