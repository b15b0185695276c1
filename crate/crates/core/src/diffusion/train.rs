use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AlphaSchedule, CodecFile, Dataset, Denoiser};
use crate::nn::{Adam, GradientTape, Matrix};
use crate::{rng, Error, Result};

/// Noise-regression training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Peak learning rate, reached after `warmup` steps.
    pub lr: f64,
    /// Learning rate at the last step (cosine decay from `lr`).
    pub lr_final: f64,
    pub warmup: u64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 12_000, batch_size: 32, lr: 1e-3, lr_final: 5e-5, warmup: 200, grad_clip: Some(50.0) }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Per-step training loss: mean over the batch of `‖ε_θ − ε‖²` summed over pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

/// Resumable training loop. Step `k` draws its batch from sub-stream `k` of
/// the seed, so stopping and resuming from a checkpoint reproduces an
/// uninterrupted run bit for bit.
#[derive(Debug, Clone)]
pub struct DenoiserTrainer {
    pub denoiser: Denoiser,
    pub config: TrainConfig,
    pub seed: u64,
    step: u64,
    core_opt: Adam,
    embed_opt: Adam,
    core_tape: GradientTape,
    embed_tape: GradientTape,
}

impl DenoiserTrainer {
    pub fn new(denoiser: Denoiser, config: TrainConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 || config.steps == 0 {
            return Err(Error::Config("training needs positive steps and batch size".into()));
        }
        if !(config.lr > 0.0 && config.lr_final >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let mut core_opt = Adam::for_net(&denoiser.core, config.lr);
        let mut embed_opt = Adam::for_net(&denoiser.label_embed, config.lr);
        if let Some(c) = config.grad_clip {
            core_opt = core_opt.with_clip(c);
            embed_opt = embed_opt.with_clip(c);
        }
        Ok(DenoiserTrainer {
            core_tape: GradientTape::for_net(&denoiser.core),
            embed_tape: GradientTape::for_net(&denoiser.label_embed),
            denoiser,
            config,
            seed,
            step: 0,
            core_opt,
            embed_opt,
        })
    }

    /// Continues from a codec file written by [`Self::to_codec_file`].
    pub fn resume(file: CodecFile, config: TrainConfig, seed: u64) -> Result<Self> {
        let mut t = Self::new(file.denoiser, config, seed)?;
        let (mut a, mut b) = file
            .optimizers
            .ok_or_else(|| Error::State("codec file carries no optimizer state to resume from".into()))?;
        a.max_grad_norm = config.grad_clip;
        b.max_grad_norm = config.grad_clip;
        t.core_opt = a;
        t.embed_opt = b;
        t.step = file.step;
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn to_codec_file(&self, schedule: &AlphaSchedule, beta_range: (f64, f64)) -> CodecFile {
        CodecFile {
            denoiser: self.denoiser.clone(),
            schedule: schedule.clone(),
            beta_range,
            step: self.step,
            optimizers: Some((self.core_opt.clone(), self.embed_opt.clone())),
        }
    }

    /// One optimizer step; returns the batch loss.
    pub fn train_step(&mut self, dataset: &Dataset, schedule: &AlphaSchedule) -> Result<f64> {
        let cfg = self.denoiser.config;
        if dataset.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if dataset.height != cfg.height || dataset.width != cfg.width {
            return Err(Error::Config(format!(
                "dataset images are {}x{}, denoiser expects {}x{}",
                dataset.height, dataset.width, cfg.height, cfg.width
            )));
        }
        let batch = self.config.batch_size;
        let pixels = cfg.pixels();
        let mut r = rng::substream(self.seed, self.step);
        let mut x_t = Matrix::zeros(batch, pixels);
        let mut noise = Matrix::zeros(batch, pixels);
        let mut steps = Vec::with_capacity(batch);
        let mut labels = Vec::with_capacity(batch);
        for b in 0..batch {
            let idx = r.random_range(0..dataset.len());
            let t = r.random_range(1..=schedule.t_train());
            let ab = schedule.alpha_bar(t);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x0 = dataset.images[idx].pixels();
            let (xr, nr) = (x_t.row_mut(b), noise.row_mut(b));
            for p in 0..pixels {
                let e: f64 = StandardNormal.sample(&mut r);
                nr[p] = e;
                xr[p] = sa * x0[p] + sb * e;
            }
            steps.push(t);
            labels.push(dataset.label(idx));
        }
        self.core_tape.zero();
        self.embed_tape.zero();
        let den = &self.denoiser;
        let emb = den.label_embed.forward_recorded(&Denoiser::one_hot_batch(&labels), &mut self.embed_tape)?;
        let input = den.assemble_input(&x_t, &steps, &emb)?;
        let out = den.core.forward_recorded(&input, &mut self.core_tape)?;
        let mut grad = Matrix::zeros(batch, pixels);
        let mut loss = 0.0;
        for ((g, o), e) in grad.as_mut_slice().iter_mut().zip(out.as_slice()).zip(noise.as_slice()) {
            let d = o - e;
            loss += d * d;
            *g = 2.0 * d / batch as f64;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.step, detail: format!("loss is {loss}") });
        }
        let d_input = den.core.backward(&mut self.core_tape, &grad)?;
        let d_emb = d_input.columns(cfg.pixels() + cfg.time_dim, cfg.label_dim);
        den.label_embed.backward(&mut self.embed_tape, &d_emb)?;
        let lr = self.config.learning_rate(self.step);
        self.core_opt.lr = lr;
        self.embed_opt.lr = lr;
        let step = self.step;
        let tag = |e: Error| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        };
        self.core_opt.step(&mut self.denoiser.core, &self.core_tape).map_err(tag)?;
        self.embed_opt.step(&mut self.denoiser.label_embed, &self.embed_tape).map_err(tag)?;
        self.step += 1;
        Ok(loss)
    }

    /// Trains until `config.steps` (or `until`, if smaller) and returns the
    /// loss of every step taken.
    pub fn run(&mut self, dataset: &Dataset, schedule: &AlphaSchedule, until: Option<u64>) -> Result<Vec<LossPoint>> {
        let end = until.map_or(self.config.steps, |u| u.min(self.config.steps));
        let mut trace = Vec::with_capacity(end.saturating_sub(self.step) as usize);
        while self.step < end {
            let step = self.step;
            let loss = self.train_step(dataset, schedule)?;
            trace.push(LossPoint { step, loss });
        }
        Ok(trace)
    }
}
