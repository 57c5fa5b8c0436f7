//! Two-sample distances between 2-D point sets.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::Point;

/// Larger inputs are subsampled (seeded) before the exact pairwise sums.
pub const MAX_ENERGY_POINTS: usize = 4096;

fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn need_two(a: &[Point]) -> Result<()> {
    if a.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: a.len() });
    }
    Ok(())
}

/// Seeded subset of at most `max` points, order preserved. Identical inputs
/// give identical subsets.
fn subsample(points: &[Point], max: usize, seed: u64) -> Vec<Point> {
    if points.len() <= max {
        return points.to_vec();
    }
    let mut r = rng::stream(seed, rng::streams::SUBSAMPLE);
    let mut idx = index::sample(&mut r, points.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Mean of `|a_i − b_j|` over all pairs. Row sums run in parallel and are
/// added in row order.
fn mean_pairwise(a: &[Point], b: &[Point]) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|p| b.iter().map(|q| dist(p, q)).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Energy distance `sqrt(2E|a−b| − E|a−a′| − E|b−b′|)`, using V-statistics
/// (diagonal pairs included) and flooring the square at zero.
pub fn energy_distance(a: &[Point], b: &[Point], seed: u64) -> Result<f64> {
    need_two(a)?;
    need_two(b)?;
    let a = subsample(a, MAX_ENERGY_POINTS, seed);
    let b = subsample(b, MAX_ENERGY_POINTS, seed);
    let ed2 = 2.0 * mean_pairwise(&a, &b) - mean_pairwise(&a, &a) - mean_pairwise(&b, &b);
    Ok(ed2.max(0.0).sqrt())
}

/// Exact 1-D Wasserstein-1 between two sorted empirical samples.
fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    // Walk the merged quantile breakpoints i/n and j/m.
    let (mut i, mut j) = (0usize, 0usize);
    let mut q = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) * m;
        let next_b = (j + 1) * n;
        let next = next_a.min(next_b) as f64 / (n * m) as f64;
        total += (next - q) * (a[i] - b[j]).abs();
        q = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    total
}

/// Mean 1-D W1 over the given projection angles (radians).
pub fn sliced_wasserstein_with_angles(a: &[Point], b: &[Point], angles: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if angles.is_empty() {
        return Err(invalid("need at least one projection"));
    }
    let project = |pts: &[Point], (c, s): (f64, f64)| {
        let mut v: Vec<f64> = pts.iter().map(|p| c * p[0] + s * p[1]).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let per: Vec<f64> = angles
        .par_iter()
        .map(|&t| {
            let dir = (t.cos(), t.sin());
            wasserstein_1d(&project(a, dir), &project(b, dir))
        })
        .collect();
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Sliced Wasserstein-1 over `n_projections` seeded uniform directions.
pub fn sliced_wasserstein(a: &[Point], b: &[Point], n_projections: usize, seed: u64) -> Result<f64> {
    if n_projections == 0 {
        return Err(invalid("n_projections must be at least 1"));
    }
    let mut r = rng::stream(seed, rng::streams::PROJECTIONS);
    let angles: Vec<f64> = (0..n_projections).map(|_| 2.0 * PI * r.random::<f64>()).collect();
    sliced_wasserstein_with_angles(a, b, &angles)
}
