use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cross_search, fps, range_search, Adjacency, NeighborGraph, PointCloud, WeightedAdjacency};
use crate::error::{Error, Result};
use crate::geometry::{KernelShape, KernelSpec};

/// Level sizes, per-level search radii and the kernel geometry of a pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec {
    pub level_sizes: Vec<usize>,
    pub radii: Vec<f64>,
    pub unpool_radii: Vec<f64>,
    pub cap: usize,
    pub kernel: KernelShape,
}

impl PyramidSpec {
    pub fn level_count(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.level_sizes.is_empty() {
            return Err(Error::invalid("pyramid needs at least one level"));
        }
        if self.level_sizes[0] == 0 || self.level_sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(format!(
                "level sizes must be positive and strictly decreasing, got {:?}",
                self.level_sizes
            )));
        }
        if self.radii.len() != self.level_sizes.len() {
            return Err(Error::invalid(format!(
                "expected {} radii, got {}",
                self.level_sizes.len(),
                self.radii.len()
            )));
        }
        if self.unpool_radii.len() + 1 != self.level_sizes.len() {
            return Err(Error::invalid(format!(
                "expected {} unpool radii, got {}",
                self.level_sizes.len() - 1,
                self.unpool_radii.len()
            )));
        }
        if self
            .radii
            .iter()
            .chain(&self.unpool_radii)
            .any(|r| !(r.is_finite() && *r > 0.0))
        {
            return Err(Error::invalid("radii must be positive"));
        }
        if self.cap == 0 {
            return Err(Error::invalid("neighbor cap must be at least 1"));
        }
        for &r in &self.radii {
            self.kernel.at_radius(r)?;
        }
        Ok(())
    }

    /// The same pyramid with level sizes rescaled for an input of `m` points
    /// (e.g. after random point dropping). Sizes stay strictly decreasing.
    pub fn for_cloud_size(&self, m: usize) -> Result<PyramidSpec> {
        let base = self.level_sizes[0];
        if m == base {
            return Ok(self.clone());
        }
        let mut sizes = Vec::with_capacity(self.level_sizes.len());
        sizes.push(m);
        for &s in &self.level_sizes[1..] {
            let prev = *sizes.last().unwrap();
            let scaled = ((s as f64) * m as f64 / base as f64).round().max(1.0) as usize;
            let s = scaled.min(prev.saturating_sub(1));
            if s == 0 {
                return Err(Error::invalid(format!(
                    "{m} points are too few for a {}-level pyramid",
                    self.level_sizes.len()
                )));
            }
            sizes.push(s);
        }
        Ok(PyramidSpec {
            level_sizes: sizes,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub cloud: PointCloud,
    pub graph: NeighborGraph,
    pub kernel: KernelSpec,
    /// Indices into the previous (finer) level; empty for level 0.
    pub parent_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPyramid {
    pub levels: Vec<PyramidLevel>,
    /// `pool[l]`: for each vertex of level `l + 1`, its level-`l` neighborhood.
    pub pool: Vec<Adjacency>,
    /// `unpool[l]`: for each vertex of level `l`, nearby level-`l + 1` vertices.
    pub unpool: Vec<WeightedAdjacency>,
    /// Level-`l` vertices whose unpool ball was empty and fell back to the
    /// nearest coarse vertex.
    pub unpool_fallbacks: Vec<usize>,
}

impl GraphPyramid {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &PyramidLevel {
        &self.levels[l]
    }

    /// Indices of each level's points in the level-0 cloud.
    pub fn original_indices(&self, l: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.levels[l].cloud.len()).collect();
        for k in (1..=l).rev() {
            let parent = &self.levels[k].parent_indices;
            for v in idx.iter_mut() {
                *v = parent[*v];
            }
        }
        idx
    }
}

/// Alternate range search and farthest point sampling down the level sizes.
pub fn build_pyramid(cloud: &PointCloud, spec: &PyramidSpec, seed: u64) -> Result<GraphPyramid> {
    spec.validate()?;
    if cloud.len() != spec.level_sizes[0] {
        return Err(Error::invalid(format!(
            "pyramid expects {} input points, cloud has {}",
            spec.level_sizes[0],
            cloud.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels: Vec<PyramidLevel> = Vec::with_capacity(spec.level_count());
    let mut pool = Vec::new();
    let mut unpool = Vec::new();
    let mut unpool_fallbacks = Vec::new();

    let mut current = cloud.clone();
    let mut parent_indices = Vec::new();
    for l in 0..spec.level_count() {
        let kernel = spec.kernel.at_radius(spec.radii[l])?;
        let graph = range_search(&current, &kernel, spec.cap, rng.random())?;
        let next_size = spec.level_sizes.get(l + 1).copied();
        levels.push(PyramidLevel {
            cloud: current.clone(),
            graph,
            kernel,
            parent_indices: std::mem::take(&mut parent_indices),
        });
        let Some(next_size) = next_size else { break };

        let seed_index = rng.random_range(0..current.len());
        let selected = fps(&current, next_size, seed_index)?;
        let coarse = current.subset(&selected);
        let fine_graph = &levels[l].graph;
        let pool_lists: Vec<Vec<u32>> = selected
            .iter()
            .map(|&s| fine_graph.neighbors(s).to_vec())
            .collect();
        pool.push(Adjacency::from_lists(&pool_lists));
        let (up, fallbacks) = cross_search(
            current.points(),
            coarse.points(),
            spec.unpool_radii[l],
            spec.cap,
            rng.random(),
        );
        unpool.push(up);
        unpool_fallbacks.push(fallbacks);
        parent_indices = selected;
        current = coarse;
    }
    Ok(GraphPyramid {
        levels,
        pool,
        unpool,
        unpool_fallbacks,
    })
}
