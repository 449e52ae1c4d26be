#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sph3d::geometry::Point3;
use sph3d::graph::PointCloud;
use sph3d::ops::FeatureMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points in the cube `[-half, half]^3`.
pub fn random_cloud(m: usize, half: f64, rng: &mut impl Rng) -> PointCloud {
    PointCloud::new(
        (0..m)
            .map(|_| {
                Point3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            })
            .collect(),
    )
    .unwrap()
}

/// Points on a dyadic grid, so that translating by a dyadic offset is exact.
pub fn dyadic_cloud(m: usize, rng: &mut impl Rng) -> PointCloud {
    let mut seen = std::collections::HashSet::new();
    let mut pts = Vec::with_capacity(m);
    while pts.len() < m {
        let k: [i64; 3] = [rng.random_range(-512..512), rng.random_range(-512..512), rng.random_range(-512..512)];
        if seen.insert(k) {
            pts.push(Point3::new(k[0] as f64, k[1] as f64, k[2] as f64) * (1.0 / 1024.0));
        }
    }
    PointCloud::new(pts).unwrap()
}

pub fn random_map(rows: usize, cols: usize, rng: &mut impl Rng) -> FeatureMap {
    FeatureMap::random(rows, cols, rng)
}

/// `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Largest relative error between `analytic` and central differences of `f`
/// with respect to each entry of `x`.
pub fn fd_max_err(x: &[f64], analytic: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut v = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + h;
        let up = f(&v);
        v[i] = orig - h;
        let down = f(&v);
        v[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

pub fn dot(a: &FeatureMap, b: &FeatureMap) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Sorted indices of `points` within `radius` of `center` (inclusive).
pub fn brute_ball(points: &[Point3], center: &Point3, radius: f64) -> Vec<u32> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (**p - *center).norm() <= radius)
        .map(|(i, _)| i as u32)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
