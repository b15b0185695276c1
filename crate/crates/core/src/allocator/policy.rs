use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ActionBounds, ConditionRanges, ConditionVector, ResourceScheme};
use crate::diffusion::time_embedding;
use crate::nn::{Activation, DenseNet, GradientTape, Matrix};
use crate::{rng, Error, Result};

/// Shape of the scheme-generation network and its denoising chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub n_denoise: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub time_dim: usize,
    /// Variance-preserving schedule endpoints.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Standard deviation of the Gaussian action prior whose exact noise
    /// estimate the network corrects.
    pub prior_std: f64,
    /// Actions are `clamp(g·tanh(a₀), −1, 1)`; a gain `g > 1` lets the
    /// policy reach the bounds at finite `a₀`.
    pub squash_gain: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            n_denoise: 5,
            hidden: 64,
            hidden_layers: 2,
            time_dim: 8,
            beta_min: 0.1,
            beta_max: 10.0,
            prior_std: 0.5,
            squash_gain: 1.1,
        }
    }
}

impl PolicyConfig {
    pub fn squash(&self, x: f64) -> f64 {
        (self.squash_gain * x.tanh()).clamp(-1.0, 1.0)
    }

    /// Derivative of [`squash`](Self::squash); zero where the clamp is active.
    pub fn squash_grad(&self, x: f64) -> f64 {
        let t = x.tanh();
        if (self.squash_gain * t).abs() >= 1.0 && self.squash_gain > 1.0 {
            0.0
        } else {
            self.squash_gain * (1.0 - t * t)
        }
    }
}

/// `ᾱ_0 = 1, …, ᾱ_N` with `α_k = exp(−β_min/N − (β_max − β_min)(2k − 1)/(2N²))`.
pub fn policy_alpha_bars(n: usize, beta_min: f64, beta_max: f64) -> Vec<f64> {
    let nf = n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    let mut acc = 1.0;
    for k in 1..=n {
        acc *= (-beta_min / nf - 0.5 * (beta_max - beta_min) * (2.0 * k as f64 - 1.0) / (nf * nf)).exp();
        out.push(acc);
    }
    out
}

fn mlp_widths(hidden: usize, layers: usize, out: usize) -> Vec<(usize, Activation)> {
    let mut w = vec![(hidden, Activation::Silu); layers];
    w.push((out, Activation::Linear));
    w
}

/// Conditional denoising policy: starting from `a_N ~ N(0, I)`, each step
/// predicts noise from `(a_k, k, c)` and moves deterministically to `a_{k−1}`.
/// The action is the squashed `a_0` (see [`PolicyConfig::squash`]).
///
/// The predicted noise is `ε̂ = s_k a_k + net(a_k, k, c)`, where
/// `s_k a_k = E[ε | a_k]` for actions drawn from `N(0, prior_std²)`. With a
/// zero network the chain is a linear contraction of `a_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub net: DenseNet,
    config: PolicyConfig,
    feature_dim: usize,
    action_dim: usize,
    alpha_bars: Vec<f64>,
}

impl DiffusionPolicy {
    pub fn new(feature_dim: usize, action_dim: usize, config: PolicyConfig, seed: u64) -> Result<Self> {
        let input = action_dim + config.time_dim + feature_dim;
        let mut net = DenseNet::new(input, &mlp_widths(config.hidden, config.hidden_layers, action_dim), seed);
        net.zero_output_layer();
        Self::from_net(net, feature_dim, action_dim, config)
    }

    pub fn from_net(net: DenseNet, feature_dim: usize, action_dim: usize, config: PolicyConfig) -> Result<Self> {
        if config.n_denoise == 0 {
            return Err(Error::Config("policy needs at least one denoising step".into()));
        }
        if !(config.beta_min > 0.0 && config.beta_min <= config.beta_max) {
            return Err(Error::Config("policy schedule needs 0 < beta_min <= beta_max".into()));
        }
        if !(config.prior_std > 0.0 && config.prior_std.is_finite()) {
            return Err(Error::Config("policy prior_std must be positive".into()));
        }
        if !(config.squash_gain >= 1.0 && config.squash_gain.is_finite()) {
            return Err(Error::Config("policy squash_gain must be at least 1".into()));
        }
        let input = action_dim + config.time_dim + feature_dim;
        if net.input_dim() != input || net.output_dim() != action_dim {
            return Err(Error::shape("policy network input", input, net.input_dim()));
        }
        let alpha_bars = policy_alpha_bars(config.n_denoise, config.beta_min, config.beta_max);
        Ok(DiffusionPolicy { net, config, feature_dim, action_dim, alpha_bars })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `a_{k−1} = A_k a_k + B_k ε̂`, returned as `(A_k + B_k s_k, B_k)` so the
    /// step reads `a_{k−1} = C a_k + B_k · net(...)`.
    fn coefficients(&self, k: usize) -> (f64, f64) {
        let (hi, lo) = (self.alpha_bars[k], self.alpha_bars[k - 1]);
        let a = (lo / hi).sqrt();
        let b = (1.0 - lo).sqrt() - a * (1.0 - hi).sqrt();
        let var = self.config.prior_std * self.config.prior_std;
        let s = (1.0 - hi).sqrt() / (hi * var + 1.0 - hi);
        (a + b * s, b)
    }

    /// Overall factor `a_0 = λ a_N` of the chain when the network outputs zero.
    pub fn prior_contraction(&self) -> f64 {
        (1..=self.config.n_denoise).map(|k| self.coefficients(k).0).product()
    }

    fn input(&self, a: &Matrix, k: usize, features: &Matrix) -> Result<Matrix> {
        let emb = time_embedding(k, self.config.time_dim);
        let t = Matrix::from_rows(&vec![emb; a.rows()]);
        Matrix::hcat(&[a, &t, features])
    }

    fn check(&self, start: &Matrix, features: &Matrix) -> Result<()> {
        if start.cols() != self.action_dim {
            return Err(Error::shape("policy start width", self.action_dim, start.cols()));
        }
        if features.cols() != self.feature_dim || features.rows() != start.rows() {
            return Err(Error::shape("policy features", start.rows() * self.feature_dim, features.as_slice().len()));
        }
        Ok(())
    }

    /// Runs the chain from `start = a_N` to the unsquashed `a_0`.
    pub fn denoise(&self, start: &Matrix, features: &Matrix) -> Result<Matrix> {
        self.check(start, features)?;
        let mut a = start.clone();
        for k in (1..=self.config.n_denoise).rev() {
            let eps = self.net.forward(&self.input(&a, k, features)?)?;
            a = self.step(&a, &eps, k);
        }
        Ok(a)
    }

    /// [`denoise`](Self::denoise) recording every network call on `tape`.
    pub fn denoise_recorded(&self, start: &Matrix, features: &Matrix, tape: &mut GradientTape) -> Result<Matrix> {
        self.check(start, features)?;
        let mut a = start.clone();
        for k in (1..=self.config.n_denoise).rev() {
            let eps = self.net.forward_recorded(&self.input(&a, k, features)?, tape)?;
            a = self.step(&a, &eps, k);
        }
        Ok(a)
    }

    fn step(&self, a: &Matrix, eps: &Matrix, k: usize) -> Matrix {
        let (ca, ce) = self.coefficients(k);
        let data = a.as_slice().iter().zip(eps.as_slice()).map(|(x, e)| ca * x + ce * e).collect();
        Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
    }

    /// Backpropagates `∂L/∂a_0` through a recorded chain, accumulating
    /// parameter gradients on `tape`; returns `∂L/∂a_N`.
    pub fn backprop_chain(&self, tape: &mut GradientTape, grad_a0: &Matrix) -> Result<Matrix> {
        let mut g = grad_a0.clone();
        for k in 1..=self.config.n_denoise {
            let (ca, ce) = self.coefficients(k);
            let mut g_eps = g.clone();
            g_eps.as_mut_slice().iter_mut().for_each(|v| *v *= ce);
            let g_in = self.net.backward(tape, &g_eps)?;
            for r in 0..g.rows() {
                let src = &g_in.row(r)[..self.action_dim];
                for (dst, s) in g.row_mut(r).iter_mut().zip(src) {
                    *dst = ca * *dst + s;
                }
            }
        }
        Ok(g)
    }

    /// Initial noise `a_N` and exploration noise drawn from `seed`.
    pub fn noise(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::seeded(seed);
        let mut draw = || -> Vec<f64> { (0..self.action_dim).map(|_| StandardNormal.sample(&mut r)).collect() };
        let start = draw();
        (start, draw())
    }

    /// Squashed actions for a batch; row `i` uses `seeds[i]`. Exploration
    /// noise scaled by `sigma` is added before the squash.
    pub fn act_batch(&self, features: &Matrix, seeds: &[u64], sigma: f64) -> Result<Matrix> {
        if seeds.len() != features.rows() {
            return Err(Error::shape("seeds per condition", features.rows(), seeds.len()));
        }
        let (starts, explore): (Vec<_>, Vec<_>) = seeds.iter().map(|&s| self.noise(s)).unzip();
        let mut a = self.denoise(&Matrix::from_rows(&starts), features)?;
        for (r, e) in explore.iter().enumerate() {
            for (v, n) in a.row_mut(r).iter_mut().zip(e) {
                *v = self.config.squash(*v + if sigma > 0.0 { sigma * n } else { 0.0 });
            }
        }
        Ok(a)
    }

    pub fn act(&self, features: &[f64], seed: u64, sigma: f64) -> Result<Vec<f64>> {
        Ok(self.act_batch(&Matrix::row_vector(features), &[seed], sigma)?.into_vec())
    }
}

/// Scheme for condition `c` from a policy over normalized conditions.
pub fn policy_generate(
    c: &ConditionVector,
    policy: &DiffusionPolicy,
    ranges: &ConditionRanges,
    bounds: &ActionBounds,
    seed: u64,
    sigma: f64,
) -> Result<ResourceScheme> {
    Ok(bounds.scheme(&policy.act(&c.normalized(ranges), seed, sigma)?))
}

/// Scheme-evaluation network `Q(c, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: DenseNet,
    feature_dim: usize,
}

impl Critic {
    pub fn new(feature_dim: usize, action_dim: usize, hidden: usize, hidden_layers: usize, seed: u64) -> Self {
        let net = DenseNet::new(feature_dim + action_dim, &mlp_widths(hidden, hidden_layers, 1), seed);
        Critic { net, feature_dim }
    }

    pub fn from_net(net: DenseNet, feature_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() <= feature_dim {
            return Err(Error::shape("critic network", feature_dim + 1, net.input_dim()));
        }
        Ok(Critic { net, feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn q(&self, features: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(self.net.forward(&Matrix::hcat(&[features, actions])?)?.into_vec())
    }

    /// Q values and `∂Q/∂a` per row. Parameter gradients are discarded.
    pub fn action_gradient(&self, features: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let mut tape = GradientTape::for_net(&self.net);
        let q = self.net.forward_recorded(&Matrix::hcat(&[features, actions])?, &mut tape)?;
        let g = self.net.backward(&mut tape, &Matrix::from_vec(q.rows(), 1, vec![1.0; q.rows()])?)?;
        Ok((q.into_vec(), g.columns(self.feature_dim, actions.cols())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(seed: u64, rows: usize, dim: usize) -> Matrix {
        let mut r = rng::seeded(seed);
        let data = (0..rows * dim).map(|_| rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
        Matrix::from_vec(rows, dim, data).unwrap()
    }

    #[test]
    fn schedule_is_decreasing_from_one() {
        let ab = policy_alpha_bars(5, 0.1, 10.0);
        assert_eq!(ab[0], 1.0);
        assert!(ab.windows(2).all(|w| w[1] < w[0]));
        // first factor exp(-0.02 - 0.198)
        assert!((ab[1] - (-0.218f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_net_contracts_the_start() {
        let mut p = DiffusionPolicy::new(4, 3, PolicyConfig::default(), 1).unwrap();
        p.net.layers_mut().iter_mut().for_each(|l| {
            l.weights.as_mut_slice().fill(0.0);
            l.bias.fill(0.0);
        });
        let start = Matrix::from_rows(&[[0.3, -1.2, 2.0]]);
        let out = p.denoise(&start, &features(2, 1, 4)).unwrap();
        let scale = p.prior_contraction();
        assert!(scale > 0.0 && scale < 1.0, "{scale}");
        for (o, s) in out.as_slice().iter().zip(start.as_slice()) {
            assert!((o - scale * s).abs() < 1e-12);
        }
        let a = p.act(&[0.0; 4], 9, 0.0).unwrap();
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn acting_is_deterministic_without_exploration() {
        let net = DenseNet::new(3 + 8 + 4, &mlp_widths(64, 2, 3), 3);
        let p = DiffusionPolicy::from_net(net, 4, 3, PolicyConfig::default()).unwrap();
        let f = [0.1, -0.2, 0.3, 0.9];
        assert_eq!(p.act(&f, 5, 0.0).unwrap(), p.act(&f, 5, 0.0).unwrap());
        assert_ne!(p.act(&f, 5, 0.0).unwrap(), p.act(&f, 5, 0.3).unwrap());
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let config = PolicyConfig { n_denoise: 2, hidden: 8, hidden_layers: 2, time_dim: 4, ..Default::default() };
        let net = DenseNet::new(3 + 4 + 5, &mlp_widths(8, 2, 3), 17);
        let policy = DiffusionPolicy::from_net(net, 5, 3, config).unwrap();
        let critic = Critic::new(5, 3, 8, 2, 23);
        let feats = features(4, 3, 5);
        let start = features(6, 3, 3);
        let objective = |p: &DiffusionPolicy| -> f64 {
            let mut a = p.denoise(&start, &feats).unwrap();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            critic.q(&feats, &a).unwrap().iter().sum()
        };
        let mut tape = GradientTape::for_net(&policy.net);
        let raw = policy.denoise_recorded(&start, &feats, &mut tape).unwrap();
        let mut squashed = raw.clone();
        squashed.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        let (_, dq) = critic.action_gradient(&feats, &squashed).unwrap();
        let mut g = dq;
        for (gv, s) in g.as_mut_slice().iter_mut().zip(squashed.as_slice()) {
            *gv *= 1.0 - s * s;
        }
        policy.backprop_chain(&mut tape, &g).unwrap();
        assert_eq!(tape.pending_records(), 0);
        let analytic = tape.flat();
        let base = policy.net.params();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut probe = policy.clone();
            let mut p = base.clone();
            p[i] += h;
            probe.net.set_params(&p).unwrap();
            let up = objective(&probe);
            p[i] -= 2.0 * h;
            probe.net.set_params(&p).unwrap();
            let fd = (up - objective(&probe)) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs());
            if scale > 1e-7 {
                worst = worst.max((fd - analytic[i]).abs() / scale);
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn critic_action_gradient_matches_finite_differences() {
        let critic = Critic::new(4, 3, 16, 2, 2);
        let f = features(1, 2, 4);
        let a = features(3, 2, 3);
        let (_, g) = critic.action_gradient(&f, &a).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut up = a.clone();
            up.as_mut_slice()[i] += h;
            let mut dn = a.clone();
            dn.as_mut_slice()[i] -= h;
            let (r, c) = (i / 3, i % 3);
            let fd = (critic.q(&f, &up).unwrap()[r] - critic.q(&f, &dn).unwrap()[r]) / (2.0 * h);
            assert!((fd - g.get(r, c)).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn generated_schemes_respect_bounds(seed in proptest::prelude::any::<u64>(), sigma in 0.0f64..2.0) {
            let ranges = ConditionRanges::default();
            let c = ranges.sample(&crate::channel::FadingParams::default(), seed).unwrap();
            let p = DiffusionPolicy::new(15, 3, PolicyConfig::default(), seed ^ 1).unwrap();
            let s = policy_generate(&c, &p, &ranges, &ActionBounds::default(), seed, sigma).unwrap();
            proptest::prop_assert!(ActionBounds::default().contains(&s));
        }
    }
}
