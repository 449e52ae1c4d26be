use rand::Rng;

use super::{check_cols, glorot_uniform, FeatureMap};
use crate::error::{Error, Result};

/// Per-vertex affine map `out = in * W + b`, `W` stored `[in][out]`.
///
/// Serves as the pointwise half of a separable convolution, as shared MLP and
/// as fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PointwiseParams {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![0.0; in_channels * out_channels],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut p = Self::zeros(n, n);
        for i in 0..n {
            p.weights[i * n + i] = 1.0;
        }
        p
    }

    pub fn init(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(in_channels, out_channels);
        p.weights = glorot_uniform(p.weights.len(), in_channels, out_channels, rng);
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.in_channels * self.out_channels
            || self.bias.len() != self.out_channels
        {
            return Err(Error::invalid("linear parameter buffers have wrong length"));
        }
        Ok(())
    }
}

pub fn pointwise_forward(input: &FeatureMap, params: &PointwiseParams) -> Result<FeatureMap> {
    params.validate()?;
    check_cols("linear input", input, params.in_channels)?;
    let (cin, cout) = (params.in_channels, params.out_channels);
    let mut out = FeatureMap::zeros(input.rows(), cout);
    for i in 0..input.rows() {
        let a = input.row(i);
        let o = out.row_mut(i);
        o.copy_from_slice(&params.bias);
        for k in 0..cin {
            let ak = a[k];
            if ak == 0.0 {
                continue;
            }
            let w = &params.weights[k * cout..(k + 1) * cout];
            for (ov, wv) in o.iter_mut().zip(w) {
                *ov += ak * wv;
            }
        }
    }
    Ok(out)
}

pub fn pointwise_backward(
    input: &FeatureMap,
    params: &PointwiseParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, LinearGrads)> {
    params.validate()?;
    check_cols("linear input", input, params.in_channels)?;
    check_cols("linear output gradient", grad_out, params.out_channels)?;
    if grad_out.rows() != input.rows() {
        return Err(Error::invalid("linear gradient row count differs from input"));
    }
    let (cin, cout) = (params.in_channels, params.out_channels);
    let mut grad_in = FeatureMap::zeros(input.rows(), cin);
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; cout];
    for i in 0..input.rows() {
        let a = input.row(i);
        let g = grad_out.row(i);
        for (b, v) in gb.iter_mut().zip(g) {
            *b += v;
        }
        let ga = grad_in.row_mut(i);
        for k in 0..cin {
            let w = &params.weights[k * cout..(k + 1) * cout];
            let gwk = &mut gw[k * cout..(k + 1) * cout];
            let ak = a[k];
            let mut acc = 0.0;
            for o in 0..cout {
                acc += w[o] * g[o];
                gwk[o] += ak * g[o];
            }
            ga[k] = acc;
        }
    }
    Ok((grad_in, LinearGrads { weights: gw, bias: gb }))
}

pub fn fully_connected(input: &FeatureMap, params: &PointwiseParams) -> Result<FeatureMap> {
    pointwise_forward(input, params)
}

pub fn fully_connected_backward(
    input: &FeatureMap,
    params: &PointwiseParams,
    grad_out: &FeatureMap,
) -> Result<(FeatureMap, LinearGrads)> {
    pointwise_backward(input, params, grad_out)
}
