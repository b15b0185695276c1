use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Transmit power, jamming power (W) and diffusion step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceScheme {
    pub p_t: f64,
    pub p_j: f64,
    pub steps: usize,
}

/// Physical ranges of the three decisions. An action `a ∈ [-1, 1]³` maps
/// affinely onto `[0, p_t_max] × [0, p_j_max]` for the powers and
/// geometrically onto `[t_min, t_max]` for the step count,
/// `T = round(t_min · (t_max / t_min)^u)` with `u = (a₂ + 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionBounds {
    pub p_t_max: f64,
    pub p_j_max: f64,
    pub t_min: usize,
    pub t_max: usize,
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds { p_t_max: 200.0, p_j_max: 1000.0, t_min: 10, t_max: 200 }
    }
}

fn unit(a: f64) -> f64 {
    ((a.clamp(-1.0, 1.0) + 1.0) / 2.0).clamp(0.0, 1.0)
}

impl ActionBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_t_max > 0.0 && self.p_j_max > 0.0 && self.t_min >= 2 && self.t_min <= self.t_max) {
            return Err(Error::Config(format!("invalid action bounds {self:?}")));
        }
        Ok(())
    }

    pub fn scheme(&self, action: &[f64]) -> ResourceScheme {
        let ratio = self.t_max as f64 / self.t_min as f64;
        let steps = (self.t_min as f64 * ratio.powf(unit(action[2]))).round() as usize;
        ResourceScheme {
            p_t: unit(action[0]) * self.p_t_max,
            p_j: unit(action[1]) * self.p_j_max,
            steps: steps.clamp(self.t_min, self.t_max),
        }
    }

    /// Inverse of [`scheme`](Self::scheme) (exact for in-range values).
    pub fn action(&self, s: &ResourceScheme) -> [f64; 3] {
        let ratio = (self.t_max as f64 / self.t_min as f64).ln();
        let u = if ratio > 0.0 { (s.steps as f64 / self.t_min as f64).ln() / ratio } else { 0.0 };
        [2.0 * s.p_t / self.p_t_max - 1.0, 2.0 * s.p_j / self.p_j_max - 1.0, 2.0 * u - 1.0]
    }

    pub fn contains(&self, s: &ResourceScheme) -> bool {
        (0.0..=self.p_t_max).contains(&s.p_t) && (0.0..=self.p_j_max).contains(&s.p_j) && (self.t_min..=self.t_max).contains(&s.steps)
    }
}

/// Linear energy cost `β_t P_t + β_j P_j + β_T T` against a budget `E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub beta_t: f64,
    pub beta_j: f64,
    pub beta_step: f64,
    pub budget: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel { beta_t: 1.0, beta_j: 1.0, beta_step: 0.5, budget: 500.0 }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_t > 0.0 && self.beta_j > 0.0 && self.beta_step > 0.0 && self.budget >= 0.0) {
            return Err(Error::Config(format!("energy coefficients must be positive, got {self:?}")));
        }
        Ok(())
    }

    pub fn cost(&self, s: &ResourceScheme) -> f64 {
        self.beta_t * s.p_t + self.beta_j * s.p_j + self.beta_step * s.steps as f64
    }

    pub fn feasible(&self, s: &ResourceScheme) -> bool {
        self.cost(s) <= self.budget
    }

    /// Largest step count affordable with the given powers.
    pub fn max_steps(&self, p_t: f64, p_j: f64) -> f64 {
        (self.budget - self.beta_t * p_t - self.beta_j * p_j) / self.beta_step
    }
}
