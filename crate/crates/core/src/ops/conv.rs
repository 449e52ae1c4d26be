use rand::Rng;

use super::{check_cols, check_rows, glorot_uniform, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::BinIndex;
use crate::graph::NeighborGraph;

/// Depthwise spherical kernel: one weight per (bin, input channel,
/// multiplier slot), plus one bias per output slot.
///
/// Weights are laid out `[bin][channel][slot]`; output channel `c * m + t`
/// holds slot `t` of input channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseKernelParams {
    pub bin_count: usize,
    pub in_channels: usize,
    pub multiplier: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DepthwiseKernelParams {
    pub fn zeros(bin_count: usize, in_channels: usize, multiplier: usize) -> Self {
        Self {
            bin_count,
            in_channels,
            multiplier,
            weights: vec![0.0; bin_count * in_channels * multiplier],
            bias: vec![0.0; in_channels * multiplier],
        }
    }

    pub fn init(bin_count: usize, in_channels: usize, multiplier: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(bin_count, in_channels, multiplier);
        p.weights = glorot_uniform(p.weights.len(), bin_count, multiplier, rng);
        p
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels * self.multiplier
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    pub fn weight_index(&self, kappa: BinIndex, c: usize, t: usize) -> usize {
        (kappa.index() * self.in_channels + c) * self.multiplier + t
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.multiplier == 0 {
            return Err(Error::invalid("depthwise multiplier must be at least 1"));
        }
        if self.weights.len() != self.bin_count * self.in_channels * self.multiplier
            || self.bias.len() != self.in_channels * self.multiplier
        {
            return Err(Error::invalid("depthwise parameter buffers have wrong length"));
        }
        Ok(())
    }
}

/// Neighborhood view shared by the intra-level and global convolutions.
pub(crate) struct Edges<'a> {
    pub neighbors: &'a [u32],
    pub bins: &'a [BinIndex],
    /// Normalizer `|N(i)|`.
    pub count: usize,
}

pub(crate) fn depthwise_forward_edges<'a>(
    targets: usize,
    edges: impl Fn(usize) -> Edges<'a>,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
) -> Result<FeatureMap> {
    params.validate()?;
    check_cols("depthwise input", input, params.in_channels)?;
    let (cin, lam) = (params.in_channels, params.multiplier);
    let width = cin * lam;
    let mut out = FeatureMap::zeros(targets, width);
    for i in 0..targets {
        let e = edges(i);
        let row = out.row_mut(i);
        for (&j, &kappa) in e.neighbors.iter().zip(e.bins) {
            if kappa.index() >= params.bin_count {
                return Err(Error::invalid(format!(
                    "bin {} exceeds kernel size {}",
                    kappa.0, params.bin_count
                )));
            }
            let a = input.row(j as usize);
            let w = &params.weights[kappa.index() * width..(kappa.index() + 1) * width];
            for c in 0..cin {
                let ac = a[c];
                for t in 0..lam {
                    row[c * lam + t] += w[c * lam + t] * ac;
                }
            }
        }
        let inv = 1.0 / e.count as f64;
        for (v, b) in row.iter_mut().zip(&params.bias) {
            *v = *v * inv + b;
        }
    }
    Ok(out)
}

pub(crate) fn depthwise_backward_edges<'a>(
    targets: usize,
    edges: impl Fn(usize) -> Edges<'a>,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, DepthwiseGrads)> {
    params.validate()?;
    check_cols("depthwise input", input, params.in_channels)?;
    check_cols("depthwise output gradient", grad_out, params.out_channels())?;
    check_rows("depthwise output gradient", grad_out, targets)?;
    let (cin, lam) = (params.in_channels, params.multiplier);
    let width = cin * lam;
    let mut grad_in = FeatureMap::zeros(input.rows(), cin);
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; params.bias.len()];
    let mut scaled = vec![0.0; width];
    for i in 0..targets {
        let e = edges(i);
        let g = grad_out.row(i);
        for (b, v) in gb.iter_mut().zip(g) {
            *b += v;
        }
        let inv = 1.0 / e.count as f64;
        for (s, v) in scaled.iter_mut().zip(g) {
            *s = v * inv;
        }
        for (&j, &kappa) in e.neighbors.iter().zip(e.bins) {
            let j = j as usize;
            let k = kappa.index();
            let w = &params.weights[k * width..(k + 1) * width];
            let gwk = &mut gw[k * width..(k + 1) * width];
            let a = input.row(j);
            let ga = grad_in.row_mut(j);
            for c in 0..cin {
                let ac = a[c];
                let mut acc = 0.0;
                for t in 0..lam {
                    let s = scaled[c * lam + t];
                    gwk[c * lam + t] += ac * s;
                    acc += w[c * lam + t] * s;
                }
                ga[c] += acc;
            }
        }
    }
    Ok((grad_in, DepthwiseGrads { weights: gw, bias: gb }))
}

fn graph_edges<'a>(graph: &'a NeighborGraph) -> impl Fn(usize) -> Edges<'a> + 'a {
    move |i| {
        let n = graph.neighbors(i);
        Edges {
            neighbors: n,
            bins: graph.bins(i),
            count: n.len(),
        }
    }
}

/// `z[i][c*m+t] = (1/|N(i)|) sum_j w[kappa(j,i)][c][t] a[j][c] + b[c][t]`,
/// accumulated in stored neighbor order.
pub fn sph3d_depthwise_forward(
    graph: &NeighborGraph,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
) -> Result<FeatureMap> {
    check_rows("depthwise input", input, graph.vertex_count())?;
    depthwise_forward_edges(graph.vertex_count(), graph_edges(graph), input, params)
}

pub fn sph3d_depthwise_backward(
    graph: &NeighborGraph,
    input: &FeatureMap,
    params: &DepthwiseKernelParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, DepthwiseGrads)> {
    check_rows("depthwise input", input, graph.vertex_count())?;
    depthwise_backward_edges(graph.vertex_count(), graph_edges(graph), input, params, grad_out)
}

/// Single-precision depthwise forward, for benchmarking only.
pub fn sph3d_depthwise_f32(
    graph: &NeighborGraph,
    input: &[f32],
    weights: &[f32],
    bias: &[f32],
    in_channels: usize,
    multiplier: usize,
) -> Vec<f32> {
    let width = in_channels * multiplier;
    let mut out = vec![0f32; graph.vertex_count() * width];
    for i in 0..graph.vertex_count() {
        let row = &mut out[i * width..(i + 1) * width];
        let n = graph.neighbors(i);
        for (&j, &kappa) in n.iter().zip(graph.bins(i)) {
            let a = &input[j as usize * in_channels..(j as usize + 1) * in_channels];
            let w = &weights[kappa.index() * width..(kappa.index() + 1) * width];
            for c in 0..in_channels {
                for t in 0..multiplier {
                    row[c * multiplier + t] += w[c * multiplier + t] * a[c];
                }
            }
        }
        let inv = 1.0 / n.len() as f32;
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v * inv + b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn self_only() -> NeighborGraph {
        NeighborGraph::from_lists(&[vec![0]], &[vec![BinIndex::SELF]], 1.0, 8).unwrap()
    }

    #[test]
    fn self_loop_scales() {
        let mut p = DepthwiseKernelParams::zeros(33, 1, 1);
        p.weights[0] = 2.0;
        let a = FeatureMap::from_vec(1, 1, vec![3.0]).unwrap();
        let z = sph3d_depthwise_forward(&self_only(), &a, &p).unwrap();
        assert_eq!(z.data(), &[6.0]);
        let g = FeatureMap::from_vec(1, 1, vec![1.0]).unwrap();
        let (ga, gp) = sph3d_depthwise_backward(&self_only(), &a, &p, &g).unwrap();
        assert_eq!(ga.data(), &[2.0]);
        assert_eq!(gp.weights[0], 3.0);
        assert_eq!(gp.bias, vec![1.0]);
    }

    #[test]
    fn shared_bin_weight() {
        let k = BinIndex(5);
        let g = NeighborGraph::from_lists(
            &[vec![0, 1, 2], vec![1], vec![2]],
            &[vec![BinIndex::SELF, k, k], vec![BinIndex::SELF], vec![BinIndex::SELF]],
            1.0,
            8,
        )
        .unwrap();
        let mut p = DepthwiseKernelParams::zeros(33, 1, 1);
        p.weights[5] = 1.0;
        let a = FeatureMap::from_vec(3, 1, vec![0.0, 1.0, 5.0]).unwrap();
        let z = sph3d_depthwise_forward(&g, &a, &p).unwrap();
        assert_eq!(z.get(0, 0), 2.0);
    }

    #[test]
    fn zero_grad_gives_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = DepthwiseKernelParams::init(33, 2, 2, &mut rng);
        let a = FeatureMap::random(1, 2, &mut rng);
        let (ga, gp) =
            sph3d_depthwise_backward(&self_only(), &a, &p, &FeatureMap::zeros(1, 4)).unwrap();
        assert!(ga.data().iter().all(|&v| v == 0.0));
        assert!(gp.weights.iter().chain(&gp.bias).all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let p = DepthwiseKernelParams::zeros(33, 2, 1);
        let a = FeatureMap::zeros(1, 3);
        assert!(sph3d_depthwise_forward(&self_only(), &a, &p).is_err());
        let a = FeatureMap::zeros(2, 2);
        assert!(sph3d_depthwise_forward(&self_only(), &a, &p).is_err());
    }

}
