//! Synthetic labeled clouds, augmentation and point-cloud files.

mod augment;
mod ply;
mod shapes;
mod xyz;

pub use augment::{augment, rotate_azimuth, AugmentConfig};
pub use ply::{load_ply, save_ply};
pub use shapes::{gen_rockets, gen_shapes, normalize_unit_sphere, ShapeKind, ROCKET_PARTS};
pub use xyz::{load_xyz, parse_xyz, save_xyz, write_xyz};

use crate::error::{Error, Result};
use crate::graph::PointCloud;

/// Minimum number of points any sample keeps.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    None,
    /// One class for the whole cloud.
    Cloud(usize),
    /// One class per point.
    Points(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Labels,
    /// Per-point colors scaled to `[-1, 1]`.
    pub colors: Option<Vec<[f64; 3]>>,
}

impl LabeledCloud {
    pub fn new(cloud: PointCloud, labels: Labels, colors: Option<Vec<[f64; 3]>>) -> Result<Self> {
        let s = Self {
            cloud,
            labels,
            colors,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.cloud.len();
        if let Labels::Points(l) = &self.labels {
            if l.len() != m {
                return Err(Error::invalid(format!("{} point labels for {m} points", l.len())));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != m {
                return Err(Error::invalid(format!("{} colors for {m} points", c.len())));
            }
            if c.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::invalid("colors must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Keep only the points at `indices`, carrying labels and colors along.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledCloud> {
        let labels = match &self.labels {
            Labels::Points(l) => Labels::Points(indices.iter().map(|&i| l[i]).collect()),
            other => other.clone(),
        };
        Ok(LabeledCloud {
            cloud: PointCloud::new(indices.iter().map(|&i| self.cloud.points()[i]).collect())?,
            labels,
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        })
    }
}
