use super::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Per-channel batch normalization over every vertex of every sample.
///
/// Running statistics start at mean 0 / variance 1 and are updated as
/// `running = momentum * running + (1 - momentum) * batch` with the biased
/// batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// What the backward pass needs from a training-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub normalized: Vec<FeatureMap>,
    pub inv_std: Vec<f64>,
}

pub fn batch_norm_forward(
    inputs: &[FeatureMap],
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Vec<FeatureMap>, Option<BatchNormCache>)> {
    let ch = state.channels();
    if inputs.iter().any(|m| m.cols() != ch) {
        return Err(Error::invalid(format!("batch norm expects {ch} channels")));
    }
    let rows: usize = inputs.iter().map(FeatureMap::rows).sum();
    if rows == 0 {
        return Err(Error::invalid("batch norm over an empty batch"));
    }
    let (mean, inv_std) = match mode {
        Mode::Inference => (
            state.running_mean.clone(),
            state
                .running_var
                .iter()
                .map(|v| 1.0 / (v + state.epsilon).sqrt())
                .collect::<Vec<_>>(),
        ),
        Mode::Training => {
            let mut mean = vec![0.0; ch];
            for m in inputs {
                for i in 0..m.rows() {
                    for (s, v) in mean.iter_mut().zip(m.row(i)) {
                        *s += v;
                    }
                }
            }
            mean.iter_mut().for_each(|s| *s /= rows as f64);
            let mut var = vec![0.0; ch];
            for m in inputs {
                for i in 0..m.rows() {
                    for ((s, v), mu) in var.iter_mut().zip(m.row(i)).zip(&mean) {
                        *s += (v - mu) * (v - mu);
                    }
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            let mo = state.momentum;
            for c in 0..ch {
                state.running_mean[c] = mo * state.running_mean[c] + (1.0 - mo) * mean[c];
                state.running_var[c] = mo * state.running_var[c] + (1.0 - mo) * var[c];
            }
            let inv_std = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
            (mean, inv_std)
        }
    };
    let mut normalized = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    for m in inputs {
        let mut xh = FeatureMap::zeros(m.rows(), ch);
        let mut y = FeatureMap::zeros(m.rows(), ch);
        for i in 0..m.rows() {
            let a = m.row(i);
            let xr = xh.row_mut(i);
            for c in 0..ch {
                xr[c] = (a[c] - mean[c]) * inv_std[c];
            }
            let yr = y.row_mut(i);
            for c in 0..ch {
                yr[c] = state.gamma[c] * xr[c] + state.beta[c];
            }
        }
        normalized.push(xh);
        outputs.push(y);
    }
    let cache = (mode == Mode::Training).then_some(BatchNormCache {
        normalized,
        inv_std,
    });
    Ok((outputs, cache))
}

/// Gradients wrt the inputs, gamma and beta of a training-mode forward.
pub fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    grad_out: &[FeatureMap],
) -> Result<(Vec<FeatureMap>, Vec<f64>, Vec<f64>)> {
    let ch = gamma.len();
    if grad_out.len() != cache.normalized.len() {
        return Err(Error::invalid("batch norm gradient batch size mismatch"));
    }
    let rows: usize = cache.normalized.iter().map(FeatureMap::rows).sum();
    let n = rows as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for (g, xh) in grad_out.iter().zip(&cache.normalized) {
        if g.cols() != ch || g.rows() != xh.rows() {
            return Err(Error::invalid("batch norm gradient shape mismatch"));
        }
        for i in 0..g.rows() {
            for c in 0..ch {
                dbeta[c] += g.get(i, c);
                dgamma[c] += g.get(i, c) * xh.get(i, c);
            }
        }
    }
    let mut grads = Vec::with_capacity(grad_out.len());
    for (g, xh) in grad_out.iter().zip(&cache.normalized) {
        let mut gi = FeatureMap::zeros(g.rows(), ch);
        for i in 0..g.rows() {
            for c in 0..ch {
                let dxh = g.get(i, c) * gamma[c];
                let v = cache.inv_std[c] / n
                    * (n * dxh - gamma[c] * dbeta[c] - xh.get(i, c) * gamma[c] * dgamma[c]);
                gi.set(i, c, v);
            }
        }
        grads.push(gi);
    }
    Ok((grads, dgamma, dbeta))
}
