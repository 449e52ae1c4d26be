//! Layer operations with analytic backward passes.
//!
//! Every op works on a [`FeatureMap`] (vertices by channels, row-major,
//! double precision) and is a pure function of its inputs.

mod activation;
mod conv;
mod dense;
mod global;
mod interp;
mod loss;
mod norm;
mod pool;

pub use activation::{elu, elu_backward};
pub use conv::{
    sph3d_depthwise_backward, sph3d_depthwise_f32, sph3d_depthwise_forward, DepthwiseGrads,
    DepthwiseKernelParams,
};
pub use dense::{
    fully_connected, fully_connected_backward, pointwise_backward, pointwise_forward, LinearGrads,
    PointwiseParams,
};
pub use global::{
    global_depthwise_backward, global_depthwise_forward, global_sph3d, GlobalGraph,
};
pub use interp::{
    uniform_interp, uniform_interp_backward, weighted_interp, weighted_interp_backward,
    InterpWeights,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batch_norm_backward, batch_norm_forward, BatchNormCache, BatchNormState, Mode};
pub use pool::{
    avg_pool, avg_pool_backward, global_max, global_max_backward, max_pool, max_pool_backward,
};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "feature buffer of {} values does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged feature rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.data[i * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Column-wise concatenation of maps with equal row counts.
    pub fn concat_cols(parts: &[&FeatureMap]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::invalid("concatenated feature maps differ in vertex count"));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Inverse of [`FeatureMap::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Vec<FeatureMap> {
        assert_eq!(widths.iter().sum::<usize>(), self.cols);
        let mut out: Vec<FeatureMap> = widths
            .iter()
            .map(|&w| FeatureMap::zeros(self.rows, w))
            .collect();
        for i in 0..self.rows {
            let row = self.row(i);
            let mut start = 0;
            for (o, &w) in out.iter_mut().zip(widths) {
                o.row_mut(i).copy_from_slice(&row[start..start + w]);
                start += w;
            }
        }
        out
    }

    /// Rows permuted so that `out[k] = self[order[k]]`.
    pub fn gather_rows(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Uniform Glorot-style init in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(len: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

pub(crate) fn check_cols(what: &str, map: &FeatureMap, expected: usize) -> Result<()> {
    if map.cols() != expected {
        return Err(Error::invalid(format!(
            "{what}: expected {expected} channels, got {}",
            map.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_rows(what: &str, map: &FeatureMap, expected: usize) -> Result<()> {
    if map.rows() != expected {
        return Err(Error::invalid(format!(
            "{what}: expected {expected} vertices, got {}",
            map.rows()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_inverse() {
        let a = FeatureMap::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = FeatureMap::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = FeatureMap::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        let parts = c.split_cols(&[2, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn shape_errors() {
        assert!(FeatureMap::from_vec(2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let a = FeatureMap::zeros(2, 1);
        let b = FeatureMap::zeros(3, 1);
        assert!(FeatureMap::concat_cols(&[&a, &b]).is_err());
    }
}
