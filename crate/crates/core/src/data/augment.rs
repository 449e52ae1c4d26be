use std::f64::consts::TAU;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{LabeledCloud, MIN_POINTS};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::graph::PointCloud;

/// Random training-time transforms. Each one is disabled by a zero magnitude
/// (or a `(1, 1)` scale range).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Up to this fraction of points is dropped.
    pub drop_fraction_max: f64,
    /// Rotation about z drawn from `[0, azimuth_max)`.
    pub azimuth_max: f64,
    /// Rotation about a random axis drawn from `[-perturbation_max, perturbation_max]`.
    pub perturbation_max: f64,
    pub scale_range: (f64, f64),
    /// Per-axis translation drawn from `[-shift_max, shift_max]`.
    pub shift_max: f64,
    pub jitter_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            drop_fraction_max: 0.0,
            azimuth_max: TAU,
            perturbation_max: 10f64.to_radians(),
            scale_range: (0.8, 1.25),
            shift_max: 0.1,
            jitter_sigma: 0.01,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self {
            drop_fraction_max: 0.0,
            azimuth_max: 0.0,
            perturbation_max: 0.0,
            scale_range: (1.0, 1.0),
            shift_max: 0.0,
            jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        if !(0.0..1.0).contains(&self.drop_fraction_max) {
            return Err(Error::invalid(format!(
                "drop_fraction_max must lie in [0, 1), got {}",
                self.drop_fraction_max
            )));
        }
        nonneg("azimuth_max", self.azimuth_max)?;
        nonneg("perturbation_max", self.perturbation_max)?;
        nonneg("shift_max", self.shift_max)?;
        nonneg("jitter_sigma", self.jitter_sigma)?;
        let (lo, hi) = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("scale range ({lo}, {hi}) is not ordered and positive")));
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        *self == Self::off()
    }
}

// Rotation matrix about the unit `axis` by `angle`.
fn rotation(axis: Point3, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let Point3 { x, y, z } = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn apply(m: &[[f64; 3]; 3], p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

fn random_axis(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v * (1.0 / n);
        }
    }
}

/// Drop, rotate about z, perturb, scale, shift and jitter, in that order.
///
/// Dropping never leaves fewer than [`MIN_POINTS`] points; clouds already at
/// or below that size keep every point.
pub fn augment(input: &LabeledCloud, cfg: &AugmentConfig, seed: u64) -> Result<LabeledCloud> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = input.len();

    let mut out = if cfg.drop_fraction_max > 0.0 {
        let fraction = rng.random::<f64>() * cfg.drop_fraction_max;
        let drop = ((fraction * m as f64).floor() as usize).min(m.saturating_sub(MIN_POINTS));
        let mut keep = sample(&mut rng, m, m - drop).into_vec();
        keep.sort_unstable();
        input.select(&keep)?
    } else {
        input.clone()
    };

    let mut pts = out.cloud.points().to_vec();
    if cfg.azimuth_max > 0.0 {
        let r = rotation(Point3::new(0.0, 0.0, 1.0), rng.random::<f64>() * cfg.azimuth_max);
        pts.iter_mut().for_each(|p| *p = apply(&r, *p));
    }
    if cfg.perturbation_max > 0.0 {
        let axis = random_axis(&mut rng);
        let angle = rng.random_range(-cfg.perturbation_max..=cfg.perturbation_max);
        let r = rotation(axis, angle);
        pts.iter_mut().for_each(|p| *p = apply(&r, *p));
    }
    let (lo, hi) = cfg.scale_range;
    if hi > lo {
        let s = rng.random_range(lo..=hi);
        pts.iter_mut().for_each(|p| *p = *p * s);
    } else if lo != 1.0 {
        pts.iter_mut().for_each(|p| *p = *p * lo);
    }
    if cfg.shift_max > 0.0 {
        let mut t = || rng.random_range(-cfg.shift_max..=cfg.shift_max);
        let shift = Point3::new(t(), t(), t());
        pts.iter_mut().for_each(|p| *p = *p + shift);
    }
    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for p in pts.iter_mut() {
            *p = *p + Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    out.cloud = PointCloud::new(pts)?;
    Ok(out)
}

/// Rotate every point about the z axis by `angle`.
pub fn rotate_azimuth(cloud: &PointCloud, angle: f64) -> PointCloud {
    let r = rotation(Point3::new(0.0, 0.0, 1.0), angle);
    PointCloud::new(cloud.points().iter().map(|p| apply(&r, *p)).collect())
        .expect("rotation keeps points finite")
}
