use super::conv::{depthwise_backward_edges, depthwise_forward_edges, Edges};
use super::{pointwise_forward, DepthwiseGrads, DepthwiseKernelParams, FeatureMap, PointwiseParams};
use crate::error::{Error, Result};
use crate::geometry::{BinIndex, KernelSpec, Point3};
use crate::graph::PointCloud;

/// Every real vertex connected to a virtual vertex at the cloud centroid,
/// binned with an `n x p x 1` kernel whose single shell spans all distances.
///
/// The virtual vertex's own self-loop carries a zero feature, so it only adds
/// to the normalizer (`|N| = m + 1`). A real vertex located exactly at the
/// centroid is treated as the self bin.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGraph {
    pub centroid: Point3,
    pub kernel: KernelSpec,
    neighbors: Vec<u32>,
    bins: Vec<BinIndex>,
}

impl GlobalGraph {
    pub fn new(cloud: &PointCloud, n: usize, p: usize) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::invalid("global convolution needs a non-empty cloud"));
        }
        let centroid = cloud.centroid();
        let reach = cloud
            .points()
            .iter()
            .map(|x| (*x - centroid).norm())
            .fold(0.0, f64::max);
        let rho = if reach > 0.0 { reach } else { 1.0 };
        let kernel = KernelSpec::new(n, p, 1, rho)?;
        let bins = cloud
            .points()
            .iter()
            .map(|x| {
                let d = *x - centroid;
                kernel.assign_offset(d, d.norm() == 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            centroid,
            kernel,
            neighbors: (0..cloud.len() as u32).collect(),
            bins,
        })
    }

    pub fn bins(&self) -> &[BinIndex] {
        &self.bins
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    fn edges<'a>(&'a self) -> impl Fn(usize) -> Edges<'a> + 'a {
        move |_| Edges {
            neighbors: &self.neighbors,
            bins: &self.bins,
            count: self.neighbors.len() + 1,
        }
    }
}

pub fn global_depthwise_forward(
    graph: &GlobalGraph,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
) -> Result<FeatureMap> {
    super::check_rows("global input", input, graph.vertex_count())?;
    depthwise_forward_edges(1, graph.edges(), input, params)
}

pub fn global_depthwise_backward(
    graph: &GlobalGraph,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, DepthwiseGrads)> {
    super::check_rows("global input", input, graph.vertex_count())?;
    depthwise_backward_edges(1, graph.edges(), input, params, grad_out)
}

/// Separable convolution evaluated only at the virtual centroid vertex.
pub fn global_sph3d(
    cloud: &PointCloud,
    input: &FeatureMap,
    depthwise: &DepthwiseKernelParams,
    pointwise: &PointwiseParams,
    n: usize,
    p: usize,
) -> Result<FeatureMap> {
    let graph = GlobalGraph::new(cloud, n, p)?;
    let z = global_depthwise_forward(&graph, input, depthwise)?;
    pointwise_forward(&z, pointwise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_self() {
        let cloud = PointCloud::new(vec![Point3::new(0.3, -0.2, 0.9)]).unwrap();
        let g = GlobalGraph::new(&cloud, 8, 2).unwrap();
        assert_eq!(g.bins(), &[BinIndex::SELF]);
        let mut dw = DepthwiseKernelParams::zeros(17, 1, 1);
        dw.weights[0] = 2.0;
        let a = FeatureMap::from_vec(1, 1, vec![3.0]).unwrap();
        let z = global_depthwise_forward(&g, &a, &dw).unwrap();
        assert_eq!(z.data(), &[3.0]);
    }

    #[test]
    fn cube_corners_split_bins() {
        let mut pts = Vec::new();
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let g = GlobalGraph::new(&PointCloud::new(pts).unwrap(), 8, 2).unwrap();
        assert_eq!(g.centroid, Point3::ORIGIN);
        let mut b = g.bins().to_vec();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 8);
    }
}
