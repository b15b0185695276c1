use covsem::allocator::*;
use covsem::Result;

/// One action, no context, reward `1 − (a − a*)²`.
struct Concave {
    peak: f64,
}

impl AllocationEnv for Concave {
    type Condition = ();

    fn feature_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn sample_condition(&self, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn features(&self, _c: &()) -> Vec<f64> {
        vec![0.0]
    }

    fn reward(&self, _c: &(), action: &[f64]) -> Result<f64> {
        Ok(1.0 - (action[0] - self.peak).powi(2))
    }
}

struct Constant(f64);

impl AllocationEnv for Constant {
    type Condition = u64;

    fn feature_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        3
    }

    fn sample_condition(&self, seed: u64) -> Result<u64> {
        Ok(seed)
    }

    fn features(&self, c: &u64) -> Vec<f64> {
        vec![(*c % 7) as f64 / 7.0, (*c % 3) as f64 / 3.0]
    }

    fn reward(&self, _c: &u64, _a: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

fn small_config(steps: usize) -> AllocatorConfig {
    AllocatorConfig {
        steps,
        warmup: 200,
        policy_lr: 1e-3,
        critic_lr: 1e-3,
        critic_hidden: 32,
        policy: PolicyConfig { hidden: 32, ..Default::default() },
        test_every: 500,
        test_conditions: 1,
        ..Default::default()
    }
}

#[test]
fn greedy_policy_finds_concave_peak() {
    let env = Concave { peak: 0.5 };
    let mut trainer = AllocatorTrainer::new(&env, small_config(4000), 7).unwrap();
    trainer.run().unwrap();
    for seed in 0..20 {
        let a = trainer.policy().act(&[0.0], seed, 0.0).unwrap()[0];
        assert!((a - 0.5).abs() <= 0.025, "seed {seed}: action {a}");
    }
}

#[test]
fn critic_learns_a_constant_reward() {
    let env = Constant(0.37);
    let mut trainer = AllocatorTrainer::new(&env, small_config(3000), 3).unwrap();
    trainer.run().unwrap();
    let feats = covsem::nn::Matrix::from_rows(&[[0.1, 0.2], [0.9, -0.3], [0.5, 0.5]]);
    let acts = covsem::nn::Matrix::from_rows(&[[0.0, 0.0, 0.0], [0.9, -0.9, 0.1], [-0.5, 0.5, 1.0]]);
    let q = trainer.critic().q(&feats, &acts).unwrap();
    let mse = q.iter().map(|v| (v - 0.37).powi(2)).sum::<f64>() / q.len() as f64;
    assert!(mse < 1e-4, "{q:?}");
}

#[test]
fn reward_trace_is_bit_reproducible() {
    let env = Concave { peak: -0.3 };
    let run = || AllocatorTrainer::new(&env, small_config(1000), 11).unwrap().run().unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train_reward.to_bits(), y.train_reward.to_bits());
        assert_eq!(x.test_reward.to_bits(), y.test_reward.to_bits());
    }
}

#[test]
fn hillclimb_accepts_only_improvements() {
    let env = Concave { peak: 0.2 };
    let res = hillclimb_baseline(&env, &(), 300, 3, 0.2, 5).unwrap();
    assert!(res.accepted.windows(2).all(|w| w[1] > w[0]));
    assert!(res.reward <= 1.0 && res.reward > 0.99);
    assert_eq!(res, hillclimb_baseline(&env, &(), 300, 3, 0.2, 5).unwrap());
    assert!(hillclimb_baseline(&env, &(), 0, 1, 0.2, 5).is_err());
}
