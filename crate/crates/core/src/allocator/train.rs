use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AllocationEnv, Critic, DiffusionPolicy, PolicyConfig};
use crate::nn::{Adam, GradientTape, Matrix};
use crate::{rng, Error, Result};

const SALT_CONDITION: u64 = 0xc0d1;
const SALT_ACTION: u64 = 0xac71;
const SALT_TEST: u64 = 0x7e57;
const SALT_GREEDY: u64 = 0x9eed;
const SALT_UPDATE: u64 = 0x0bda;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorConfig {
    /// Environment interactions.
    pub steps: usize,
    /// Interactions with uniformly random actions before learning starts.
    pub warmup: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    /// Pre-squash exploration noise, decayed linearly to `sigma_final`.
    pub sigma: f64,
    pub sigma_final: f64,
    pub critic_hidden: usize,
    pub critic_layers: usize,
    /// Weight of the `mean ‖a₀‖²` penalty on pre-squash actions.
    pub action_reg: f64,
    pub policy: PolicyConfig,
    pub test_every: usize,
    pub test_conditions: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig {
            steps: 40_000,
            warmup: 1_000,
            batch_size: 64,
            buffer_size: 10_000,
            policy_lr: 1e-4,
            critic_lr: 1e-3,
            sigma: 0.5,
            sigma_final: 0.05,
            critic_hidden: 128,
            critic_layers: 2,
            action_reg: 1e-3,
            policy: PolicyConfig::default(),
            test_every: 500,
            test_conditions: 20,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.buffer_size < self.batch_size {
            return Err(Error::Config("buffer_size must be at least batch_size > 0".into()));
        }
        if !(self.policy_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.action_reg >= 0.0) {
            return Err(Error::Config("action_reg must be non-negative".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma_final >= 0.0) {
            return Err(Error::Config("exploration noise must be non-negative".into()));
        }
        if self.test_every == 0 {
            return Err(Error::Config("test_every must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma_at(&self, step: usize) -> f64 {
        let frac = (step as f64 / self.steps.max(1) as f64).min(1.0);
        self.sigma + (self.sigma_final - self.sigma) * frac
    }
}

/// Fixed-capacity ring buffer of `(features, action, reward)` transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<(Vec<f64>, Vec<f64>, f64)>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: Vec::with_capacity(capacity), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, action: Vec<f64>, reward: f64) {
        if self.items.len() < self.capacity {
            self.items.push((features, action, reward));
        } else {
            self.items[self.next] = (features, action, reward);
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, r: &mut R, n: usize) -> (Matrix, Matrix, Vec<f64>) {
        let picks: Vec<&(Vec<f64>, Vec<f64>, f64)> = (0..n).map(|_| &self.items[r.random_range(0..self.items.len())]).collect();
        let f: Vec<&[f64]> = picks.iter().map(|p| p.0.as_slice()).collect();
        let a: Vec<&[f64]> = picks.iter().map(|p| p.1.as_slice()).collect();
        (Matrix::from_rows(&f), Matrix::from_rows(&a), picks.iter().map(|p| p.2).collect())
    }
}

/// One row of the reward trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub step: usize,
    /// Mean reward of the exploratory actions since the previous row.
    pub train_reward: f64,
    /// Mean greedy-policy reward over the test conditions.
    pub test_reward: f64,
}

/// Joint training of the diffusion policy and its critic.
pub struct AllocatorTrainer<'e, E: AllocationEnv> {
    env: &'e E,
    config: AllocatorConfig,
    seed: u64,
    policy: DiffusionPolicy,
    critic: Critic,
    policy_opt: Adam,
    critic_opt: Adam,
    buffer: ReplayBuffer,
    update_rng: ChaCha8Rng,
    test_set: Vec<E::Condition>,
    recent: VecDeque<f64>,
    step: usize,
}

impl<'e, E: AllocationEnv> AllocatorTrainer<'e, E> {
    pub fn new(env: &'e E, config: AllocatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (fd, ad) = (env.feature_dim(), env.action_dim());
        let policy = DiffusionPolicy::new(fd, ad, config.policy, rng::derive_seed(seed, 1))?;
        let critic = Critic::new(fd, ad, config.critic_hidden, config.critic_layers, rng::derive_seed(seed, 2));
        let test_set = (0..config.test_conditions as u64)
            .map(|i| env.sample_condition(rng::derive_seed(rng::derive_seed(seed, SALT_TEST), i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AllocatorTrainer {
            env,
            policy_opt: Adam::for_net(&policy.net, config.policy_lr),
            critic_opt: Adam::for_net(&critic.net, config.critic_lr),
            policy,
            critic,
            buffer: ReplayBuffer::new(config.buffer_size),
            update_rng: rng::seeded(rng::derive_seed(seed, SALT_UPDATE)),
            test_set,
            recent: VecDeque::new(),
            config,
            seed,
            step: 0,
        })
    }

    pub fn policy(&self) -> &DiffusionPolicy {
        &self.policy
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Seed of the starting noise the greedy policy uses for test condition `i`.
    pub fn greedy_seed(seed: u64, i: usize) -> u64 {
        rng::derive_seed(rng::derive_seed(seed, SALT_GREEDY), i as u64)
    }

    /// Mean reward of the noise-free policy on the fixed test conditions.
    pub fn test_reward(&self) -> Result<f64> {
        if self.test_set.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for (i, c) in self.test_set.iter().enumerate() {
            let a = self.policy.act(&self.env.features(c), Self::greedy_seed(self.seed, i), 0.0)?;
            total += self.env.reward(c, &a)?;
        }
        Ok(total / self.test_set.len() as f64)
    }

    /// One interaction followed by one critic and one policy update.
    pub fn train_step(&mut self) -> Result<f64> {
        let k = self.step as u64;
        let c = self.env.sample_condition(rng::derive_seed(rng::derive_seed(self.seed, SALT_CONDITION), k))?;
        let features = self.env.features(&c);
        let action_seed = rng::derive_seed(rng::derive_seed(self.seed, SALT_ACTION), k);
        let action = if self.step < self.config.warmup {
            let mut r = rng::seeded(action_seed);
            (0..self.env.action_dim()).map(|_| r.random_range(-1.0..1.0)).collect()
        } else {
            self.policy.act(&features, action_seed, self.config.sigma_at(self.step))?
        };
        let reward = self.env.reward(&c, &action)?;
        self.buffer.push(features, action, reward);
        self.recent.push_back(reward);
        if self.buffer.len() >= self.config.batch_size {
            self.update_critic()?;
            if self.step >= self.config.warmup {
                self.update_policy()?;
            }
        }
        self.step += 1;
        Ok(reward)
    }

    fn update_critic(&mut self) -> Result<()> {
        let (f, a, r) = self.buffer.sample(&mut self.update_rng, self.config.batch_size);
        let mut tape = GradientTape::for_net(&self.critic.net);
        let q = self.critic.net.forward_recorded(&Matrix::hcat(&[&f, &a])?, &mut tape)?;
        let n = r.len() as f64;
        let grad = q.as_slice().iter().zip(&r).map(|(q, r)| 2.0 * (q - r) / n).collect();
        self.critic.net.backward(&mut tape, &Matrix::from_vec(r.len(), 1, grad)?)?;
        self.critic_opt.step(&mut self.critic.net, &tape).map_err(|e| self.divergence("critic", e))
    }

    fn update_policy(&mut self) -> Result<()> {
        let (f, _, _) = self.buffer.sample(&mut self.update_rng, self.config.batch_size);
        let dim = self.env.action_dim();
        let rows = f.rows();
        let start: Vec<f64> = (0..rows * dim).map(|_| StandardNormal.sample(&mut self.update_rng)).collect();
        let start = Matrix::from_vec(rows, dim, start)?;
        let mut tape = GradientTape::for_net(&self.policy.net);
        let raw = self.policy.denoise_recorded(&start, &f, &mut tape)?;
        let pc = *self.policy.config();
        let mut a = raw.clone();
        a.as_mut_slice().iter_mut().for_each(|v| *v = pc.squash(*v));
        let (_, dq) = self.critic.action_gradient(&f, &a)?;
        let mut g = dq;
        let reg = 2.0 * self.config.action_reg;
        for (gv, pre) in g.as_mut_slice().iter_mut().zip(raw.as_slice()) {
            *gv = (-*gv * pc.squash_grad(*pre) + reg * pre) / rows as f64;
        }
        self.policy.backprop_chain(&mut tape, &g)?;
        self.policy_opt.step(&mut self.policy.net, &tape).map_err(|e| self.divergence("policy", e))
    }

    fn divergence(&self, which: &str, e: Error) -> Error {
        let tail: Vec<String> = self.recent.iter().rev().take(5).map(|r| format!("{r:.4}")).collect();
        Error::Divergence { step: self.step as u64, detail: format!("{which} update failed ({e}); last rewards [{}]", tail.join(", ")) }
    }

    /// Trains until `config.steps` interactions, recording a trace row every
    /// `test_every` steps and at the end.
    pub fn run(&mut self) -> Result<Vec<RewardPoint>> {
        let mut trace = Vec::new();
        while self.step < self.config.steps {
            self.train_step()?;
            if self.step.is_multiple_of(self.config.test_every) || self.step == self.config.steps {
                let train_reward = self.recent.iter().sum::<f64>() / self.recent.len().max(1) as f64;
                self.recent.clear();
                trace.push(RewardPoint { step: self.step, train_reward, test_reward: self.test_reward()? });
            }
        }
        Ok(trace)
    }

    pub fn into_parts(self) -> (DiffusionPolicy, Critic) {
        (self.policy, self.critic)
    }
}
