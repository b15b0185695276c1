use super::{DenseNet, GradientTape};
use crate::{Error, Result};

/// Adam optimizer state with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the moment update.
    pub max_grad_norm: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn for_net(net: &DenseNet, lr: f64) -> Self {
        Self::new(net.param_count(), lr)
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, step: u64, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::shape("optimizer moments", self.m.len(), m.len()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one update to `net` from the gradients in `tape`.
    pub fn step(&mut self, net: &mut DenseNet, tape: &GradientTape) -> Result<()> {
        if net.param_count() != self.m.len() {
            return Err(Error::shape("optimizer parameters", self.m.len(), net.param_count()));
        }
        if let Some((i, g)) = tape.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Divergence {
                step: self.step,
                detail: format!("gradient entry {i} is {g}"),
            });
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = tape.norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut idx = 0;
        for (layer, (gw, gb)) in net.layers.iter_mut().zip(&tape.grads) {
            let params = layer.weights.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
            let grads = gw.as_slice().iter().chain(gb.iter());
            for (p, &g) in params.zip(grads) {
                let g = g * scale;
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                idx += 1;
            }
        }
        Ok(())
    }
}
