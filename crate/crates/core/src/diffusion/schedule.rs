use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cumulative noise schedule `ᾱ_t`, `t = 0..=T_train`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    t_train: usize,
    alpha_bar: Vec<f64>,
}

impl AlphaSchedule {
    /// Linear per-step β from `beta_start` to `beta_end`, `ᾱ_t = Π_{s ≤ t} (1 − β_s)`.
    ///
    /// `beta_start = beta_end = 0` is accepted and yields the noiseless
    /// schedule `ᾱ ≡ 1`; any positive `beta_start` gives a strictly
    /// decreasing schedule.
    pub fn linear(t_train: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_train < 10 {
            return Err(Error::Config(format!("T_train must be at least 10, got {t_train}")));
        }
        if !(0.0..1.0).contains(&beta_start) || !(beta_start..1.0).contains(&beta_end) {
            return Err(Error::Config(format!(
                "need 0 <= beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(t_train + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for s in 1..=t_train {
            let frac = (s - 1) as f64 / (t_train - 1) as f64;
            let beta = beta_start + (beta_end - beta_start) * frac;
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Ok(AlphaSchedule { t_train, alpha_bar })
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    /// `ᾱ_t`. Panics if `t > T_train`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Strictly decreasing uniform-stride subsequence `T_train = τ_n > … > τ_0 = 0`
    /// with `n = steps` transitions.
    pub fn inference_steps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.t_train {
            return Err(Error::Config(format!(
                "inference steps must be in 1..={}, got {steps}",
                self.t_train
            )));
        }
        Ok((0..=steps).rev().map(|i| i * self.t_train / steps).collect())
    }
}
