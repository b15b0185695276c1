use serde::{Deserialize, Serialize};

use super::{ActionBounds, ConditionRanges, ConditionVector, EnergyModel, ResourceScheme, SsimSurrogate, CONDITION_DIM};
use crate::channel::{FadingParams, FadingSamples};
use crate::{rng, Result};

/// A contextual bandit: conditions arrive, an action in `[-1, 1]^d` is
/// chosen, a scalar reward comes back.
pub trait AllocationEnv: Sync {
    type Condition: Clone + Send + Sync;

    fn feature_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn sample_condition(&self, seed: u64) -> Result<Self::Condition>;
    /// Policy and critic input for `c`.
    fn features(&self, c: &Self::Condition) -> Vec<f64>;
    fn reward(&self, c: &Self::Condition, action: &[f64]) -> Result<f64>;
}

/// Outcome of one scheme under one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reward: f64,
    pub dep: f64,
    pub mean_bep: f64,
    pub energy: f64,
    pub covert: bool,
    pub affordable: bool,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.covert && self.affordable
    }
}

/// Constrained reward against a fixed set of fading samples: SSIM predicted
/// by `surrogate` when the scheme is covert and affordable, otherwise
/// `violation_reward`.
pub fn evaluate_with_samples(
    c: &ConditionVector,
    r: &ResourceScheme,
    energy: &EnergyModel,
    surrogate: &SsimSurrogate,
    samples: &FadingSamples,
    violation_reward: f64,
) -> Result<Evaluation> {
    let cost = energy.cost(r);
    let affordable = cost <= energy.budget;
    if !affordable {
        return Ok(Evaluation { reward: violation_reward, dep: f64::NAN, mean_bep: f64::NAN, energy: cost, covert: false, affordable });
    }
    let stats = samples.statistics(&c.geometry, r.p_t, r.p_j)?;
    let covert = stats.dep >= c.geometry.xi_th;
    let reward = if covert { surrogate.query(stats.mean_bep, r.steps as f64) } else { violation_reward };
    Ok(Evaluation { reward, dep: stats.dep, mean_bep: stats.mean_bep, energy: cost, covert, affordable })
}

/// [`evaluate_with_samples`] on `n_mc` fresh fading draws.
pub fn evaluate_scheme(
    c: &ConditionVector,
    r: &ResourceScheme,
    energy: &EnergyModel,
    surrogate: &SsimSurrogate,
    fading: &FadingParams,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let samples = FadingSamples::draw(fading, n_mc, seed)?;
    Ok(evaluate_with_samples(c, r, energy, surrogate, &samples, 0.0)?.reward)
}

/// The covert-link allocation problem.
#[derive(Debug, Clone)]
pub struct CovertEnv {
    pub ranges: ConditionRanges,
    pub fading: FadingParams,
    pub bounds: ActionBounds,
    pub energy: EnergyModel,
    pub surrogate: SsimSurrogate,
    pub n_mc: usize,
    pub violation_reward: f64,
}

/// A condition together with the fading draws its rewards average over.
#[derive(Debug, Clone)]
pub struct PreparedCondition {
    pub vector: ConditionVector,
    pub samples: FadingSamples,
}

impl CovertEnv {
    pub fn prepare(&self, vector: ConditionVector, seed: u64) -> Result<PreparedCondition> {
        Ok(PreparedCondition { vector, samples: FadingSamples::draw(&self.fading, self.n_mc, seed)? })
    }

    pub fn evaluate(&self, c: &PreparedCondition, scheme: &ResourceScheme) -> Result<Evaluation> {
        evaluate_with_samples(&c.vector, scheme, &self.energy, &self.surrogate, &c.samples, self.violation_reward)
    }
}

impl AllocationEnv for CovertEnv {
    type Condition = PreparedCondition;

    fn feature_dim(&self) -> usize {
        CONDITION_DIM
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn sample_condition(&self, seed: u64) -> Result<PreparedCondition> {
        let vector = self.ranges.sample(&self.fading, seed)?;
        self.prepare(vector, rng::derive_seed(seed, 2))
    }

    fn features(&self, c: &PreparedCondition) -> Vec<f64> {
        c.vector.normalized(&self.ranges)
    }

    fn reward(&self, c: &PreparedCondition, action: &[f64]) -> Result<f64> {
        Ok(self.evaluate(c, &self.bounds.scheme(action))?.reward)
    }
}
