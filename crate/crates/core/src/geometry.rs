//! Spherical coordinates and the discrete spherical kernel.
//!
//! A kernel of radius `rho` is split uniformly into `n` azimuth and `p`
//! elevation sectors and non-uniformly into `q` radial shells. Every bin gets
//! an index `kappa = k_theta + (k_phi - 1) n + (k_r - 1) n p` in `1..=n*p*q`;
//! index 0 is reserved for the self-loop.
//!
//! Bin intervals are half-open `[lower, upper)` with the last interval of each
//! dimension closed on the right. An azimuth of exactly `+pi` is wrapped to
//! `-pi` before binning.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Relative slack under which a radius marginally above `rho` is clamped to `rho`.
pub const RADIUS_CLAMP_SLACK: f64 = 1e-12;

/// Lower radial edge, as a fraction of `rho`.
pub const EPSILON_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        (*self - *other).norm_squared()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Offset in spherical coordinates: azimuth in `[-pi, pi)`, elevation in
/// `[-pi/2, pi/2]`, radius `>= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalOffset {
    pub theta: f64,
    pub phi: f64,
    pub r: f64,
}

pub fn cart_to_sph(delta: Point3) -> Result<SphericalOffset> {
    if !delta.is_finite() {
        return Err(Error::invalid(format!("non-finite offset {delta:?}")));
    }
    let r = delta.norm();
    if r == 0.0 {
        return Ok(SphericalOffset {
            theta: 0.0,
            phi: 0.0,
            r: 0.0,
        });
    }
    let mut theta = delta.y.atan2(delta.x);
    if theta >= PI {
        theta = -PI;
    }
    let phi = (delta.z / r).clamp(-1.0, 1.0).asin();
    Ok(SphericalOffset { theta, phi, r })
}

pub fn sph_to_cart(s: SphericalOffset) -> Point3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Point3::new(s.r * cp * ct, s.r * cp * st, s.r * sp)
}

/// Kernel weight index; 0 is the self-loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BinIndex(pub u32);

impl BinIndex {
    pub const SELF: BinIndex = BinIndex(0);

    pub fn is_self(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `n * p * q + 1`, counting the self-convolution bin.
pub const fn bin_count_for(n: usize, p: usize, q: usize) -> usize {
    n * p * q + 1
}

/// Bin count of a cubic voxel kernel of resolution `h` (no separate self bin).
pub const fn voxel_bin_count(h: usize) -> usize {
    h * h * h
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    n: usize,
    p: usize,
    q: usize,
    rho: f64,
    azimuth: Vec<f64>,
    elevation: Vec<f64>,
    radial: Vec<f64>,
    allow_asymmetry_violation: bool,
}

/// Geometry of one bin, for inspection dumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinGeometry {
    pub kappa: BinIndex,
    pub k_theta: usize,
    pub k_phi: usize,
    pub k_r: usize,
    pub theta: (f64, f64),
    pub phi: (f64, f64),
    pub r: (f64, f64),
}

impl BinGeometry {
    /// Center of the bin's angular/radial extent, in Cartesian coordinates.
    pub fn center(&self) -> Point3 {
        sph_to_cart(SphericalOffset {
            theta: 0.5 * (self.theta.0 + self.theta.1),
            phi: 0.5 * (self.phi.0 + self.phi.1),
            r: 0.5 * (self.r.0 + self.r.1),
        })
    }
}

impl KernelSpec {
    /// Kernel with the default radial boundaries `R_k = rho * sqrt(k / q)`.
    pub fn new(n: usize, p: usize, q: usize, rho: f64) -> Result<Self> {
        Self::build(n, p, q, rho, None, false)
    }

    /// Kernel with explicit radial boundaries `[eps, R_1, ..., R_q = rho]`.
    pub fn with_radial_boundaries(
        n: usize,
        p: usize,
        q: usize,
        rho: f64,
        radial: Vec<f64>,
    ) -> Result<Self> {
        Self::build(n, p, q, rho, Some(radial), false)
    }

    /// Same as [`KernelSpec::new`] but accepting `(n, p)` splits that break
    /// the asymmetry sign conditions.
    pub fn new_unchecked_symmetry(n: usize, p: usize, q: usize, rho: f64) -> Result<Self> {
        Self::build(n, p, q, rho, None, true)
    }

    pub fn build(
        n: usize,
        p: usize,
        q: usize,
        rho: f64,
        radial: Option<Vec<f64>>,
        allow_asymmetry_violation: bool,
    ) -> Result<Self> {
        if n == 0 || p == 0 || q == 0 {
            return Err(Error::invalid(format!(
                "kernel bin counts must be positive, got {n}x{p}x{q}"
            )));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::invalid(format!("kernel radius must be positive, got {rho}")));
        }
        let azimuth: Vec<f64> = (0..=n)
            .map(|k| PI * (2 * k as i64 - n as i64) as f64 / n as f64)
            .collect();
        let elevation: Vec<f64> = (0..=p)
            .map(|k| FRAC_PI_2 * (2 * k as i64 - p as i64) as f64 / p as f64)
            .collect();
        if !allow_asymmetry_violation {
            if n <= 2 {
                return Err(Error::invalid(format!(
                    "azimuth bin count must exceed 2 for asymmetric kernels, got {n}"
                )));
            }
            if azimuth.windows(2).any(|w| w[0] * w[1] < 0.0) {
                return Err(Error::invalid(format!(
                    "azimuth split n={n} has a sector straddling zero"
                )));
            }
            if elevation.windows(2).any(|w| w[0] * w[1] < 0.0) {
                return Err(Error::invalid(format!(
                    "elevation split p={p} has a sector straddling zero"
                )));
            }
        }
        let eps = EPSILON_FRACTION * rho;
        let radial = match radial {
            None => {
                let mut r = Vec::with_capacity(q + 1);
                r.push(eps);
                r.extend((1..q).map(|k| rho * (k as f64 / q as f64).sqrt()));
                r.push(rho);
                r
            }
            Some(r) => {
                if r.len() != q + 1 {
                    return Err(Error::invalid(format!(
                        "expected {} radial boundaries, got {}",
                        q + 1,
                        r.len()
                    )));
                }
                if r[0] <= 0.0 || r.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid(
                        "radial boundaries must be positive and strictly increasing",
                    ));
                }
                if (r[q] - rho).abs() > RADIUS_CLAMP_SLACK * rho {
                    return Err(Error::invalid(format!(
                        "last radial boundary {} must equal the kernel radius {rho}",
                        r[q]
                    )));
                }
                let mut r = r;
                r[q] = rho;
                r
            }
        };
        Ok(Self {
            n,
            p,
            q,
            rho,
            azimuth,
            elevation,
            radial,
            allow_asymmetry_violation,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn azimuth_boundaries(&self) -> &[f64] {
        &self.azimuth
    }
    pub fn elevation_boundaries(&self) -> &[f64] {
        &self.elevation
    }
    pub fn radial_boundaries(&self) -> &[f64] {
        &self.radial
    }
    pub fn allows_asymmetry_violation(&self) -> bool {
        self.allow_asymmetry_violation
    }

    pub fn bin_count(&self) -> usize {
        bin_count_for(self.n, self.p, self.q)
    }

    pub fn kappa(&self, k_theta: usize, k_phi: usize, k_r: usize) -> BinIndex {
        debug_assert!((1..=self.n).contains(&k_theta));
        debug_assert!((1..=self.p).contains(&k_phi));
        debug_assert!((1..=self.q).contains(&k_r));
        BinIndex((k_theta + (k_phi - 1) * self.n + (k_r - 1) * self.n * self.p) as u32)
    }

    /// Inverse of [`KernelSpec::kappa`] for non-self bins.
    pub fn decompose(&self, kappa: BinIndex) -> Option<(usize, usize, usize)> {
        let k = kappa.index();
        if k == 0 || k >= self.bin_count() {
            return None;
        }
        let z = k - 1;
        let np = self.n * self.p;
        Some((z % self.n + 1, (z % np) / self.n + 1, z / np + 1))
    }

    /// Geometry of every non-self bin, ordered by `kappa`.
    pub fn bins(&self) -> Vec<BinGeometry> {
        (1..self.bin_count())
            .map(|k| {
                let kappa = BinIndex(k as u32);
                let (kt, kp, kr) = self.decompose(kappa).expect("in range");
                BinGeometry {
                    kappa,
                    k_theta: kt,
                    k_phi: kp,
                    k_r: kr,
                    theta: (self.azimuth[kt - 1], self.azimuth[kt]),
                    phi: (self.elevation[kp - 1], self.elevation[kp]),
                    r: (if kr == 1 { 0.0 } else { self.radial[kr - 1] }, self.radial[kr]),
                }
            })
            .collect()
    }

    /// Locate `offset` inside the kernel. `is_self` must be set exactly for the
    /// vertex's own self-loop.
    pub fn assign_bin(&self, offset: SphericalOffset, is_self: bool) -> Result<BinIndex> {
        if is_self {
            return Ok(BinIndex::SELF);
        }
        let mut r = offset.r;
        if r > self.rho {
            if r <= self.rho * (1.0 + RADIUS_CLAMP_SLACK) {
                r = self.rho;
            } else {
                return Err(Error::OutOfRange { r, rho: self.rho });
            }
        }
        if r == 0.0 {
            return Err(Error::DegenerateOffset);
        }
        let mut theta = offset.theta;
        if theta >= PI {
            theta = -PI;
        }
        let k_theta = 1 + count_at_or_below(&self.azimuth[1..self.n], theta);
        let k_phi = 1 + count_at_or_below(&self.elevation[1..self.p], offset.phi);
        let k_r = 1 + count_at_or_below(&self.radial[1..self.q], r);
        Ok(self.kappa(k_theta, k_phi, k_r))
    }

    /// Bin of the Cartesian offset `neighbor - center`.
    pub fn assign_offset(&self, delta: Point3, is_self: bool) -> Result<BinIndex> {
        self.assign_bin(cart_to_sph(delta)?, is_self)
    }
}

/// Free-function form of [`KernelSpec::assign_bin`].
pub fn assign_bin(spec: &KernelSpec, offset: SphericalOffset, is_self: bool) -> Result<BinIndex> {
    spec.assign_bin(offset, is_self)
}

// Number of sorted interior boundaries `<= value`.
fn count_at_or_below(sorted: &[f64], value: f64) -> usize {
    sorted.partition_point(|&b| b <= value)
}

/// Kernel geometry without a radius; instantiated per pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelShape {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// Optional radial edges `R_1..R_q` as fractions of the radius (last = 1).
    pub radial_fractions: Option<Vec<f64>>,
}

impl KernelShape {
    pub fn new(n: usize, p: usize, q: usize) -> Self {
        Self {
            n,
            p,
            q,
            radial_fractions: None,
        }
    }

    pub fn bin_count(&self) -> usize {
        bin_count_for(self.n, self.p, self.q)
    }

    pub fn at_radius(&self, rho: f64) -> Result<KernelSpec> {
        let radial = self.radial_fractions.as_ref().map(|f| {
            let mut r = Vec::with_capacity(f.len() + 1);
            r.push(EPSILON_FRACTION * rho);
            r.extend(f.iter().map(|x| x * rho));
            r
        });
        KernelSpec::build(self.n, self.p, self.q, rho, radial, false)
    }
}
