//! Synthetic 2-D datasets and data std shifting.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::Point;

const RING_COMPONENTS: usize = 8;
const RING_RADIUS: f64 = 1.0;
const RING_COMPONENT_STD: f64 = 0.1;
const MOONS_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    GaussRing8,
    TwoMoons,
    Checkerboard,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::GaussRing8, DatasetName::TwoMoons, DatasetName::Checkerboard];

    pub fn name(self) -> &'static str {
        match self {
            DatasetName::GaussRing8 => "gauss-ring8",
            DatasetName::TwoMoons => "two-moons",
            DatasetName::Checkerboard => "checkerboard",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| invalid(format!("unknown dataset '{s}' (expected gauss-ring8, two-moons or checkerboard)")))
    }
}

/// A finite 2-D point cloud with its pooled per-coordinate std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset2d {
    pub name: DatasetName,
    points: Vec<Point>,
    native_std: f64,
}

impl Dataset2d {
    pub fn from_points(name: DatasetName, points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: points.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("dataset contains non-finite coordinates"));
        }
        let native_std = pooled_std(&points);
        Ok(Dataset2d { name, points, native_std })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn native_std(&self) -> f64 {
        self.native_std
    }

    /// Rescales every point by `target_std / native_std`.
    pub fn shift_to_std(&self, target_std: f64) -> Result<Dataset2d> {
        if !(target_std > 0.0 && target_std.is_finite()) {
            return Err(invalid(format!("target std must be positive, got {target_std}")));
        }
        if self.native_std.is_nan() || self.native_std <= 0.0 {
            return Err(invalid("dataset has zero spread and cannot be rescaled"));
        }
        let scale = target_std / self.native_std;
        let points = self.points.iter().map(|p| [p[0] * scale, p[1] * scale]).collect();
        Dataset2d::from_points(self.name, points)
    }
}

/// Standard deviation about the mean, pooled over both coordinates.
pub fn pooled_std(points: &[Point]) -> f64 {
    let n = points.len() as f64;
    let mean = [0, 1].map(|c| points.iter().map(|p| p[c]).sum::<f64>() / n);
    let ss: f64 = points
        .iter()
        .map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2))
        .sum();
    (ss / (2.0 * n)).sqrt()
}

/// `n` seeded draws from the named distribution.
pub fn generate<R: Rng + ?Sized>(name: DatasetName, n: usize, rng: &mut R) -> Result<Dataset2d> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let points = (0..n)
        .map(|_| match name {
            DatasetName::GaussRing8 => gauss_ring(rng),
            DatasetName::TwoMoons => two_moons(rng),
            DatasetName::Checkerboard => checkerboard(rng),
        })
        .collect();
    Dataset2d::from_points(name, points)
}

fn gauss_ring<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let k = rng.random_range(0..RING_COMPONENTS);
    let angle = 2.0 * PI * k as f64 / RING_COMPONENTS as f64;
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    [
        RING_RADIUS * angle.cos() + RING_COMPONENT_STD * dx,
        RING_RADIUS * angle.sin() + RING_COMPONENT_STD * dy,
    ]
}

fn two_moons<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let theta = PI * rng.random::<f64>();
    let (x, y) = if rng.random::<bool>() {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    };
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    [x + MOONS_NOISE * dx, y + MOONS_NOISE * dy]
}

// 4x4 board on [-2, 2]², mass on alternating unit squares.
fn checkerboard<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let x = 4.0 * rng.random::<f64>() - 2.0;
    let y0 = rng.random::<f64>() - 2.0 * rng.random_range(0..2) as f64;
    let y = y0 + (x.floor().rem_euclid(2.0));
    [x, y]
}
