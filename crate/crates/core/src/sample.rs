//! Fixed-step ODE integration of a velocity field from noise (`u = 0`) to
//! data (`u = 1`).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::net::Mlp;
use crate::rng::Rng as SeededRng;
use crate::timestep_dist::DEFAULT_EPSILON_CLIP;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Euler,
    Heun,
}

/// Anything that predicts `dx/du` for a batch.
pub trait VelocityField {
    fn velocity(&self, x: &[Point], u: &[f64]) -> Result<Vec<Point>>;
}

impl VelocityField for Mlp {
    fn velocity(&self, x: &[Point], u: &[f64]) -> Result<Vec<Point>> {
        self.forward(x, u)
    }
}

/// Wraps a per-point closure `(x, u) -> v` as a field.
pub struct FnField<F>(pub F);

impl<F: Fn(Point, f64) -> Point> VelocityField for FnField<F> {
    fn velocity(&self, x: &[Point], u: &[f64]) -> Result<Vec<Point>> {
        Ok(x.iter().zip(u).map(|(&p, &t)| (self.0)(p, t)).collect())
    }
}

/// Draws `n_samples` standard-normal starting points from `rng` and
/// integrates them with [`integrate_from`].
pub fn integrate<V: VelocityField + ?Sized>(
    field: &V,
    n_samples: usize,
    n_steps: usize,
    method: Method,
    mut rng: SeededRng,
) -> Result<Vec<Point>> {
    let x0: Vec<Point> = (0..n_samples)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    integrate_from(field, x0, n_steps, method)
}

/// Integrates `dx/du = v(x, u)` over unit time in `n_steps` equal steps.
///
/// The field is evaluated at grid times clamped to `[ε, 1 − ε]`, so the
/// network never sees the endpoints, while the total integration time stays
/// exactly one.
pub fn integrate_from<V: VelocityField + ?Sized>(
    field: &V,
    mut x: Vec<Point>,
    n_steps: usize,
    method: Method,
) -> Result<Vec<Point>> {
    if n_steps == 0 {
        return Err(invalid("n_steps must be at least 1"));
    }
    let h = 1.0 / n_steps as f64;
    let eps = DEFAULT_EPSILON_CLIP;
    let time = |k: usize| (k as f64 * h).clamp(eps, 1.0 - eps);
    let n = x.len();
    for k in 0..n_steps {
        let u0 = vec![time(k); n];
        let v0 = field.velocity(&x, &u0)?;
        match method {
            Method::Euler => {
                for (p, v) in x.iter_mut().zip(&v0) {
                    p[0] += h * v[0];
                    p[1] += h * v[1];
                }
            }
            Method::Heun => {
                let guess: Vec<Point> = x
                    .iter()
                    .zip(&v0)
                    .map(|(p, v)| [p[0] + h * v[0], p[1] + h * v[1]])
                    .collect();
                let u1 = vec![time(k + 1); n];
                let v1 = field.velocity(&guess, &u1)?;
                for ((p, a), b) in x.iter_mut().zip(&v0).zip(&v1) {
                    p[0] += 0.5 * h * (a[0] + b[0]);
                    p[1] += 0.5 * h * (a[1] + b[1]);
                }
            }
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { stage: "sampling", step: k + 1 });
        }
    }
    Ok(x)
}

/// Maps samples from the training scale back to the data's native scale.
pub fn unshift(samples: &[Point], native_std: f64, target_std: f64) -> Result<Vec<Point>> {
    if !(native_std > 0.0 && target_std > 0.0) {
        return Err(invalid("standard deviations must be positive"));
    }
    let k = native_std / target_std;
    Ok(samples.iter().map(|p| [p[0] * k, p[1] * k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MlpSpec;
    use crate::rng;

    #[test]
    fn zero_field_keeps_noise() {
        let m = Mlp::zeros(MlpSpec::default()).unwrap();
        let a = integrate(&m, 50, 10, Method::Heun, rng::stream(0, 0)).unwrap();
        let mut r = rng::stream(0, 0);
        for p in &a {
            let x: f64 = r.sample(StandardNormal);
            let y: f64 = r.sample(StandardNormal);
            assert_eq!(*p, [x, y]);
        }
    }

    #[test]
    fn constant_field_translates_by_one() {
        let f = FnField(|_, _| [1.0, 0.0]);
        for method in [Method::Euler, Method::Heun] {
            for steps in [1, 3, 7, 250] {
                let out = integrate_from(&f, vec![[0.5, -0.5]], steps, method).unwrap();
                assert!((out[0][0] - 1.5).abs() < 1e-12 && out[0][1] == -0.5);
            }
        }
    }

    #[test]
    fn heun_matches_exponential_decay() {
        let f = FnField(|p: Point, _| [-p[0], -p[1]]);
        let x0 = vec![[1.0, -2.0]];
        let out = integrate_from(&f, x0, 250, Method::Heun).unwrap()[0];
        let e = (-1.0f64).exp();
        assert!(((out[0] - e) / e).abs() < 1e-4);
        assert!(((out[1] + 2.0 * e) / (2.0 * e)).abs() < 1e-4);
        // Euler is only first order.
        let eul = integrate_from(&f, vec![[1.0, 0.0]], 250, Method::Euler).unwrap()[0];
        assert!(((eul[0] - e) / e).abs() > 1e-4);
    }

    #[test]
    fn field_sees_clamped_times() {
        let f = FnField(|_, u: f64| {
            assert!((1e-5..=1.0 - 1e-5).contains(&u));
            [0.0, 0.0]
        });
        integrate_from(&f, vec![[0.0, 0.0]], 4, Method::Heun).unwrap();
    }

    #[test]
    fn divergence_names_the_step() {
        let f = FnField(|p: Point, _| [p[0] * 1e200, 0.0]);
        match integrate_from(&f, vec![[1.0, 0.0]], 10, Method::Euler) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
        assert!(integrate_from(&f, vec![[1.0, 0.0]], 0, Method::Euler).is_err());
    }

    #[test]
    fn unshift_examples() {
        let p = vec![[1.0, -2.0]];
        assert_eq!(unshift(&p, 0.7, 0.7).unwrap(), p);
        let k = unshift(&[[1.0, 1.0]], 0.714, 0.82).unwrap()[0][0];
        assert!((k - 0.8707).abs() < 1e-4);
        // Scaling by t/n then by n/t is the identity.
        let shifted: Vec<Point> = p.iter().map(|q| [q[0] * 0.82 / 0.714, q[1] * 0.82 / 0.714]).collect();
        let back = unshift(&shifted, 0.714, 0.82).unwrap();
        assert!((back[0][0] - 1.0).abs() < 1e-12 && (back[0][1] + 2.0).abs() < 1e-12);
        assert!(unshift(&p, 0.0, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = Mlp::new(MlpSpec::default(), 1).unwrap();
        let a = integrate(&m, 32, 20, Method::Euler, rng::stream(4, 0)).unwrap();
        let b = integrate(&m, 32, 20, Method::Euler, rng::stream(4, 0)).unwrap();
        assert_eq!(a, b);
    }
}
