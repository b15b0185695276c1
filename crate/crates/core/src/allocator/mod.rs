//! Resource allocation for the covert link.
//!
//! A condition `c` (geometry, thresholds, fading) goes into a conditional
//! diffusion policy that denoises a Gaussian sample into an action
//! `a ∈ [-1, 1]³`, mapped to `(P_t, P_j, T)`. The reward is the SSIM the
//! codec is expected to reach at the resulting bit error probability and
//! step count, or zero when the scheme is detectable or over budget. A
//! critic `Q(c, a)` regresses observed rewards and the policy ascends `Q`
//! by backpropagating through the whole denoising chain.

mod baselines;
mod condition;
mod env;
mod policy;
mod scheme;
mod surrogate;
mod train;

pub use baselines::{hillclimb_baseline, oracle_over, oracle_solve, HillClimbResult, OracleConfig, OracleResult};
pub use condition::{ConditionRanges, ConditionVector, CONDITION_DIM};
pub use env::{evaluate_scheme, evaluate_with_samples, AllocationEnv, CovertEnv, Evaluation, PreparedCondition};
pub use policy::{policy_alpha_bars, policy_generate, Critic, DiffusionPolicy, PolicyConfig};
pub use scheme::{ActionBounds, EnergyModel, ResourceScheme};
pub use surrogate::{SsimSurrogate, SurrogateProvenance};
pub use train::{AllocatorConfig, AllocatorTrainer, ReplayBuffer, RewardPoint};
