use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LabeledCloud, Labels, MIN_POINTS};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::graph::PointCloud;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    /// Cylinder body with a cone nose; carries part labels.
    Rocket,
}

/// Part names of [`ShapeKind::Rocket`], indexed by label.
pub const ROCKET_PARTS: [&str; 2] = ["body", "nose"];

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Cone => "cone",
            ShapeKind::Torus => "torus",
            ShapeKind::Rocket => "rocket",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "sphere" => ShapeKind::Sphere,
            "cube" => ShapeKind::Cube,
            "cylinder" => ShapeKind::Cylinder,
            "cone" => ShapeKind::Cone,
            "torus" => ShapeKind::Torus,
            "rocket" => ShapeKind::Rocket,
            other => return Err(Error::invalid(format!("unknown shape class `{other}`"))),
        })
    }
}

/// Zero-mean, unit-max-radius copy of `points`.
pub fn normalize_unit_sphere(points: &mut [Point3]) {
    let n = points.len() as f64;
    let c = points.iter().fold(Point3::ORIGIN, |a, p| a + *p) * (1.0 / n);
    for p in points.iter_mut() {
        *p = *p - c;
    }
    let r = points.iter().map(Point3::norm).fold(0.0, f64::max);
    if r > 0.0 {
        for p in points.iter_mut() {
            *p = *p * (1.0 / r);
        }
    }
}

/// Surface patches with their areas; sampling picks a patch by area.
struct Surface<'a> {
    areas: Vec<f64>,
    samplers: Vec<Box<dyn Fn(&mut ChaCha8Rng) -> Point3 + 'a>>,
    labels: Vec<usize>,
}

impl<'a> Surface<'a> {
    fn new() -> Self {
        Self {
            areas: Vec::new(),
            samplers: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn patch(
        mut self,
        area: f64,
        label: usize,
        f: impl Fn(&mut ChaCha8Rng) -> Point3 + 'a,
    ) -> Self {
        self.areas.push(area);
        self.samplers.push(Box::new(f));
        self.labels.push(label);
        self
    }

    fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> (Vec<Point3>, Vec<usize>) {
        let total: f64 = self.areas.iter().sum();
        let mut pts = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut u = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < self.areas.len() && u >= self.areas[k] {
                u -= self.areas[k];
                k += 1;
            }
            pts.push((self.samplers[k])(rng));
            labels.push(self.labels[k]);
        }
        (pts, labels)
    }
}

fn unit_disk(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let r = rng.random::<f64>().sqrt();
    let t = rng.random::<f64>() * TAU;
    (r * t.cos(), r * t.sin())
}

fn sphere_point(rng: &mut ChaCha8Rng) -> Point3 {
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

fn box_surface<'a>(half: [f64; 3]) -> Surface<'a> {
    let [a, b, c] = half;
    let mut s = Surface::new();
    for sign in [-1.0, 1.0] {
        s = s
            .patch(4.0 * b * c, 0, move |r: &mut ChaCha8Rng| {
                Point3::new(sign * a, r.random_range(-b..b), r.random_range(-c..c))
            })
            .patch(4.0 * a * c, 0, move |r: &mut ChaCha8Rng| {
                Point3::new(r.random_range(-a..a), sign * b, r.random_range(-c..c))
            })
            .patch(4.0 * a * b, 0, move |r: &mut ChaCha8Rng| {
                Point3::new(r.random_range(-a..a), r.random_range(-b..b), sign * c)
            });
    }
    s
}

// Lateral surface of a cylinder of radius `r` between heights z0 and z1.
fn tube(r: f64, z0: f64, z1: f64) -> impl Fn(&mut ChaCha8Rng) -> Point3 {
    move |rng| {
        let t = rng.random::<f64>() * TAU;
        Point3::new(r * t.cos(), r * t.sin(), rng.random_range(z0..z1))
    }
}

fn disk(r: f64, z: f64) -> impl Fn(&mut ChaCha8Rng) -> Point3 {
    move |rng| {
        let (x, y) = unit_disk(rng);
        Point3::new(r * x, r * y, z)
    }
}

// Lateral cone surface with base radius `r` at z0 and apex at z0 + h.
fn cone_side(r: f64, z0: f64, h: f64) -> impl Fn(&mut ChaCha8Rng) -> Point3 {
    move |rng| {
        // Area density grows linearly with distance from the apex.
        let s = rng.random::<f64>().sqrt();
        let t = rng.random::<f64>() * TAU;
        Point3::new(r * s * t.cos(), r * s * t.sin(), z0 + h * (1.0 - s))
    }
}

fn sample_shape(kind: ShapeKind, count: usize, rng: &mut ChaCha8Rng) -> (Vec<Point3>, Vec<usize>) {
    match kind {
        ShapeKind::Sphere => {
            // Antipodal pairs keep the sample centroid at the center.
            let mut pts = Vec::with_capacity(count);
            while pts.len() < count {
                let p = sphere_point(rng);
                pts.push(p);
                if pts.len() < count {
                    pts.push(-p);
                }
            }
            (pts, vec![0; count])
        }
        ShapeKind::Cube => {
            let half = [
                rng.random_range(0.9..1.1),
                rng.random_range(0.9..1.1),
                rng.random_range(0.9..1.1),
            ];
            box_surface(half).sample(count, rng)
        }
        ShapeKind::Cylinder => {
            let h = rng.random_range(1.5..3.0);
            Surface::new()
                .patch(TAU * h, 0, tube(1.0, -h / 2.0, h / 2.0))
                .patch(PI, 0, disk(1.0, -h / 2.0))
                .patch(PI, 0, disk(1.0, h / 2.0))
                .sample(count, rng)
        }
        ShapeKind::Cone => {
            let h: f64 = rng.random_range(1.5..2.5);
            let slant = (1.0 + h * h).sqrt();
            Surface::new()
                .patch(PI * slant, 0, cone_side(1.0, 0.0, h))
                .patch(PI, 0, disk(1.0, 0.0))
                .sample(count, rng)
        }
        ShapeKind::Torus => {
            let major = 1.0;
            let minor = rng.random_range(0.25..0.45);
            let pts = (0..count)
                .map(|_| loop {
                    let u = rng.random::<f64>() * TAU;
                    let v = rng.random::<f64>() * TAU;
                    let w = (major + minor * v.cos()) / (major + minor);
                    if rng.random::<f64>() <= w {
                        let ring = major + minor * v.cos();
                        break Point3::new(ring * u.cos(), ring * u.sin(), minor * v.sin());
                    }
                })
                .collect();
            (pts, vec![0; count])
        }
        ShapeKind::Rocket => {
            let body = rng.random_range(2.0..3.5);
            let nose: f64 = rng.random_range(1.0..2.0);
            let slant = (1.0 + nose * nose).sqrt();
            Surface::new()
                .patch(TAU * body, 0, tube(1.0, 0.0, body))
                .patch(PI, 0, disk(1.0, 0.0))
                .patch(PI * slant, 1, cone_side(1.0, body, nose))
                .sample(count, rng)
        }
    }
}

fn generate(kind: ShapeKind, count: usize, seed: u64) -> Result<(PointCloud, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pts, labels) = sample_shape(kind, count, &mut rng);
    normalize_unit_sphere(&mut pts);
    Ok((PointCloud::new(pts)?, labels))
}

/// `samples_per_class` clouds of every class, labeled by position in
/// `classes`, ordered class-major.
pub fn gen_shapes(
    classes: &[ShapeKind],
    points_per_cloud: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledCloud>> {
    if points_per_cloud < MIN_POINTS {
        return Err(Error::invalid(format!(
            "clouds need at least {MIN_POINTS} points, got {points_per_cloud}"
        )));
    }
    let mut out = Vec::with_capacity(classes.len() * samples_per_class);
    for (label, &kind) in classes.iter().enumerate() {
        for s in 0..samples_per_class {
            let (cloud, _) = generate(kind, points_per_cloud, derive_seed(seed, &[kind as u64, s as u64]))?;
            out.push(LabeledCloud {
                cloud,
                labels: Labels::Cloud(label),
                colors: None,
            });
        }
    }
    Ok(out)
}

/// Rockets with per-point part labels (0 = body, 1 = nose).
pub fn gen_rockets(points_per_cloud: usize, samples: usize, seed: u64) -> Result<Vec<LabeledCloud>> {
    if points_per_cloud < MIN_POINTS {
        return Err(Error::invalid(format!(
            "clouds need at least {MIN_POINTS} points, got {points_per_cloud}"
        )));
    }
    (0..samples)
        .map(|s| {
            let (cloud, labels) = generate(
                ShapeKind::Rocket,
                points_per_cloud,
                derive_seed(seed, &[ShapeKind::Rocket as u64, s as u64]),
            )?;
            Ok(LabeledCloud {
                cloud,
                labels: Labels::Points(labels),
                colors: None,
            })
        })
        .collect()
}
