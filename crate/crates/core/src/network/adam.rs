use super::config::TrainConfig;
use super::model::{Gradients, Network};
use crate::error::{Error, Result};

/// Adam with bias-corrected first and second moments.
///
/// A non-zero `weight_decay` adds `weight_decay * p` to each gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay: 0.0,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            weight_decay: cfg.weight_decay,
            ..Self::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` from `grads`, matched by position.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || params.iter().zip(grads).zip(&self.m).any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::invalid("gradient shapes do not match the parameters"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Apply `grads` to `net` and advance its step counter.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let g = grads.slices();
        self.update(net.parameters_mut(), &g)?;
        net.set_step(net.step() + 1);
        Ok(())
    }
}
