//! Point-cloud graphs: capped range-search edges, farthest point sampling and
//! the coarsening pyramid used by pooling and unpooling.

mod dump;
mod fps;
mod pyramid;
mod search;

pub use dump::{dump_pyramid, pyramid_stats, LevelStats};
pub use fps::fps;
pub use pyramid::{build_pyramid, GraphPyramid, PyramidLevel, PyramidSpec};
pub use search::{within, RadiusIndex, BRUTE_FORCE_THRESHOLD};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BinIndex, KernelSpec, Point3};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let s = self
            .points
            .iter()
            .fold(Point3::ORIGIN, |acc, p| acc + *p);
        s * (1.0 / self.points.len() as f64)
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn translated(&self, t: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| *p + t).collect(),
        }
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }
}

/// Compressed per-vertex lists of source indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Adjacency {
    pub fn from_lists(lists: &[Vec<u32>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut indices = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for l in lists {
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn to_lists(&self) -> Vec<Vec<u32>> {
        self.iter().map(<[u32]>::to_vec).collect()
    }
}

/// [`Adjacency`] with one distance per entry, used by weighted interpolation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedAdjacency {
    pub adjacency: Adjacency,
    distances: Vec<f64>,
}

impl WeightedAdjacency {
    pub fn new(adjacency: Adjacency, distances: Vec<f64>) -> Self {
        assert_eq!(adjacency.edge_count(), distances.len());
        Self {
            adjacency,
            distances,
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn get(&self, i: usize) -> (&[u32], &[f64]) {
        let a = &self.adjacency;
        let range = a.offsets[i]..a.offsets[i + 1];
        (&a.indices[range.clone()], &self.distances[range])
    }
}

/// Capped intra-level neighborhoods with precomputed kernel bins.
///
/// Each list contains the vertex itself and is sorted ascending; the self
/// entry is recognised by index equality and always carries bin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Adjacency,
    bins: Vec<BinIndex>,
    radius: f64,
    cap: usize,
}

impl NeighborGraph {
    /// Assemble a graph from explicit lists. Lists need not be sorted, which
    /// lets callers probe order dependence; lengths must agree.
    pub fn from_lists(
        lists: &[Vec<u32>],
        bins: &[Vec<BinIndex>],
        radius: f64,
        cap: usize,
    ) -> Result<Self> {
        if lists.len() != bins.len() {
            return Err(Error::invalid("neighbor and bin list counts differ"));
        }
        for (i, (l, b)) in lists.iter().zip(bins).enumerate() {
            if l.len() != b.len() {
                return Err(Error::invalid(format!("vertex {i}: bin list length mismatch")));
            }
            if l.iter().any(|&j| j as usize >= lists.len()) {
                return Err(Error::invalid(format!("vertex {i}: neighbor index out of range")));
            }
        }
        Ok(Self {
            adjacency: Adjacency::from_lists(lists),
            bins: bins.iter().flatten().copied().collect(),
            radius,
            cap,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        self.adjacency.get(i)
    }

    pub fn bins(&self, i: usize) -> &[BinIndex] {
        &self.bins[self.adjacency.offsets[i]..self.adjacency.offsets[i + 1]]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.edge_count()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Bin of the edge `j -> i` if present.
    pub fn bin_of(&self, i: usize, j: usize) -> Option<BinIndex> {
        let n = self.neighbors(i);
        n.iter().position(|&x| x as usize == j).map(|s| self.bins(i)[s])
    }

    /// Copy of the graph with every neighbor list (and its bins) reordered by
    /// `order(i, len)`, which must return a permutation of `0..len`.
    pub fn reordered(&self, mut order: impl FnMut(usize, usize) -> Vec<usize>) -> Self {
        let mut lists = Vec::with_capacity(self.vertex_count());
        let mut bins = Vec::with_capacity(self.vertex_count());
        for i in 0..self.vertex_count() {
            let n = self.neighbors(i);
            let b = self.bins(i);
            let perm = order(i, n.len());
            lists.push(perm.iter().map(|&s| n[s]).collect::<Vec<_>>());
            bins.push(perm.iter().map(|&s| b[s]).collect::<Vec<_>>());
        }
        Self::from_lists(&lists, &bins, self.radius, self.cap).expect("permutation of valid graph")
    }
}

/// Radius neighbors of every vertex, capped at `cap` entries.
///
/// When the ball holds more than `cap` points the vertex keeps its self-loop
/// plus a uniform random subset of `cap - 1` others, drawn from a stream keyed
/// by `(seed, vertex)`.
pub fn range_search(cloud: &PointCloud, kernel: &KernelSpec, cap: usize, seed: u64) -> Result<NeighborGraph> {
    if cap == 0 {
        return Err(Error::invalid("neighbor cap must be at least 1"));
    }
    let radius = kernel.rho();
    let pts = cloud.points();
    let index = RadiusIndex::new(pts, radius);
    let per_vertex: Vec<(Vec<u32>, Vec<BinIndex>)> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut list = index.query(&pts[i]);
            if list.len() > cap {
                list = subsample_keeping(&list, i as u32, cap, seed, i as u64);
            }
            let bins = list
                .iter()
                .map(|&j| {
                    let j = j as usize;
                    kernel.assign_offset(pts[j] - pts[i], j == i)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((list, bins))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lists, bins): (Vec<_>, Vec<_>) = per_vertex.into_iter().unzip();
    NeighborGraph::from_lists(&lists, &bins, radius, cap)
}

/// Sorted radius neighbors of each query in `targets`, capped (no self entry
/// is forced since the sets differ), with distances. Empty balls fall back to
/// the single nearest target.
pub(crate) fn cross_search(
    queries: &[Point3],
    targets: &[Point3],
    radius: f64,
    cap: usize,
    seed: u64,
) -> (WeightedAdjacency, usize) {
    let index = RadiusIndex::new(targets, radius);
    let results: Vec<(Vec<u32>, bool)> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut list = index.query(q);
            let mut fallback = false;
            if list.is_empty() {
                list.push(index.nearest(q).expect("non-empty target set"));
                fallback = true;
            } else if list.len() > cap {
                list = subsample(&list, cap, seed, i as u64);
            }
            (list, fallback)
        })
        .collect();
    let fallbacks = results.iter().filter(|(_, f)| *f).count();
    let lists: Vec<Vec<u32>> = results.into_iter().map(|(l, _)| l).collect();
    let distances = lists
        .iter()
        .zip(queries)
        .flat_map(|(l, q)| l.iter().map(move |&j| q.distance(&targets[j as usize])))
        .collect();
    (
        WeightedAdjacency::new(Adjacency::from_lists(&lists), distances),
        fallbacks,
    )
}

fn vertex_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn subsample_keeping(list: &[u32], keep: u32, cap: usize, seed: u64, stream: u64) -> Vec<u32> {
    let others: Vec<u32> = list.iter().copied().filter(|&j| j != keep).collect();
    let mut rng = vertex_rng(seed, stream);
    let mut out: Vec<u32> = rand::seq::index::sample(&mut rng, others.len(), cap - 1)
        .into_iter()
        .map(|s| others[s])
        .collect();
    out.push(keep);
    out.sort_unstable();
    out
}

fn subsample(list: &[u32], cap: usize, seed: u64, stream: u64) -> Vec<u32> {
    let mut rng = vertex_rng(seed, stream);
    let mut out: Vec<u32> = rand::seq::index::sample(&mut rng, list.len(), cap)
        .into_iter()
        .map(|s| list[s])
        .collect();
    out.sort_unstable();
    out
}
