//! Deterministic DDIM transitions, inversion (encode) and generation (decode).
//!
//! Both directions use the same transfer between two noise levels `a → b`:
//!
//! ```text
//! f   = (x_a − √(1 − ᾱ_a) · ε) / √ᾱ_a          predicted clean image
//! x_b = √ᾱ_b · f + √(1 − ᾱ_b) · ε
//! ```
//!
//! Generation evaluates `ε` at the noisier end (`a = t_hi`, `b = t_lo`);
//! inversion evaluates it at the cleaner end (`a = t_lo`, `b = t_hi`).

use crate::diffusion::{AlphaSchedule, ShapeClass, ToyImage};
use crate::nn::Matrix;
use crate::{Error, Result};

/// Anything that predicts the noise component of a batch of noisy images.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &Matrix, t: usize, labels: &[ShapeClass]) -> Result<Matrix>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict_noise(&self, x: &Matrix, t: usize, labels: &[ShapeClass]) -> Result<Matrix> {
        (**self).predict_noise(x, t, labels)
    }
}

/// Predictor that always answers zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, x: &Matrix, _t: usize, _labels: &[ShapeClass]) -> Result<Matrix> {
        Ok(Matrix::zeros(x.rows(), x.cols()))
    }
}

/// Closed-form predictor for known clean images: `ε = (x_t − √ᾱ_t x0) / √(1 − ᾱ_t)`.
///
/// At `t = 0` (where the formula is 0/0) it returns the stored reference noise,
/// which is the constant value `ε` takes along an exact DDIM trajectory.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser<'a> {
    pub clean: Matrix,
    pub noise: Matrix,
    pub schedule: &'a AlphaSchedule,
}

impl NoisePredictor for AnalyticDenoiser<'_> {
    fn predict_noise(&self, x: &Matrix, t: usize, _labels: &[ShapeClass]) -> Result<Matrix> {
        if x.rows() != self.clean.rows() || x.cols() != self.clean.cols() {
            return Err(Error::shape("analytic denoiser batch", self.clean.as_slice().len(), x.as_slice().len()));
        }
        let ab = self.schedule.alpha_bar(t);
        if ab >= 1.0 {
            return Ok(self.noise.clone());
        }
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let data = x
            .as_slice()
            .iter()
            .zip(self.clean.as_slice())
            .map(|(xt, x0)| (xt - sa * x0) / sb)
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }
}

/// Inverted noise map of an image, used as the visual prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrompt {
    pub height: usize,
    pub width: usize,
    pub latent: Vec<f64>,
}

/// Clean-image estimate `f = (x_t − √(1 − ᾱ) ε) / √ᾱ`.
pub fn predicted_clean(x_t: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (sa, sb) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.iter().zip(eps).map(|(x, e)| (x - sb * e) / sa).collect()
}

fn transfer(x: &Matrix, eps: &Matrix, ab_from: f64, ab_to: f64) -> Matrix {
    let (sa_from, sb_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (sa_to, sb_to) = (ab_to.sqrt(), (1.0 - ab_to).sqrt());
    let data = x
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .map(|(xv, e)| sa_to * ((xv - sb_from * e) / sa_from) + sb_to * e)
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape as input")
}

fn check_labels(x: &Matrix, labels: &[ShapeClass]) -> Result<()> {
    if labels.len() != x.rows() {
        return Err(Error::shape("labels per batch row", x.rows(), labels.len()));
    }
    Ok(())
}

/// One generative step `x_{t_hi} → x_{t_lo}`.
pub fn ddim_reverse_step<P: NoisePredictor>(
    x: &Matrix,
    t_hi: usize,
    t_lo: usize,
    labels: &[ShapeClass],
    predictor: &P,
    schedule: &AlphaSchedule,
) -> Result<Matrix> {
    if t_hi <= t_lo || t_hi > schedule.t_train() {
        return Err(Error::Domain(format!("reverse step needs T_train >= t_hi > t_lo, got {t_hi} -> {t_lo}")));
    }
    check_labels(x, labels)?;
    let eps = predictor.predict_noise(x, t_hi, labels)?;
    Ok(transfer(x, &eps, schedule.alpha_bar(t_hi), schedule.alpha_bar(t_lo)))
}

/// One inversion step `x_{t_lo} → x_{t_hi}`.
pub fn ddim_forward_step<P: NoisePredictor>(
    x: &Matrix,
    t_lo: usize,
    t_hi: usize,
    labels: &[ShapeClass],
    predictor: &P,
    schedule: &AlphaSchedule,
) -> Result<Matrix> {
    if t_hi <= t_lo || t_hi > schedule.t_train() {
        return Err(Error::Domain(format!("forward step needs T_train >= t_hi > t_lo, got {t_lo} -> {t_hi}")));
    }
    check_labels(x, labels)?;
    let eps = predictor.predict_noise(x, t_lo, labels)?;
    Ok(transfer(x, &eps, schedule.alpha_bar(t_lo), schedule.alpha_bar(t_hi)))
}

/// Inverts a batch of clean images (one per row) into their noise maps.
pub fn encode_batch<P: NoisePredictor>(
    clean: &Matrix,
    labels: &[ShapeClass],
    predictor: &P,
    schedule: &AlphaSchedule,
    steps: usize,
) -> Result<Matrix> {
    if steps < 2 {
        return Err(Error::Config(format!("DDIM needs at least 2 steps, got {steps}")));
    }
    let seq = schedule.inference_steps(steps)?;
    let mut x = clean.clone();
    for pair in seq.windows(2).rev() {
        x = ddim_forward_step(&x, pair[1], pair[0], labels, predictor, schedule)?;
    }
    Ok(x)
}

/// Generates a batch of images from noise maps; the last step lands on the
/// clean-image estimate itself, and the result is clamped to `[-1, 1]`.
pub fn decode_batch<P: NoisePredictor>(
    latent: &Matrix,
    labels: &[ShapeClass],
    predictor: &P,
    schedule: &AlphaSchedule,
    steps: usize,
) -> Result<Matrix> {
    let mut x = decode_batch_unclamped(latent, labels, predictor, schedule, steps)?;
    for v in x.as_mut_slice() {
        *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    }
    Ok(x)
}

/// [`decode_batch`] without the final clamp, for chain-accuracy checks.
pub fn decode_batch_unclamped<P: NoisePredictor>(
    latent: &Matrix,
    labels: &[ShapeClass],
    predictor: &P,
    schedule: &AlphaSchedule,
    steps: usize,
) -> Result<Matrix> {
    if steps < 2 {
        return Err(Error::Config(format!("DDIM needs at least 2 steps, got {steps}")));
    }
    let seq = schedule.inference_steps(steps)?;
    let mut x = latent.clone();
    for pair in seq.windows(2) {
        x = ddim_reverse_step(&x, pair[0], pair[1], labels, predictor, schedule)?;
    }
    Ok(x)
}

pub fn encode<P: NoisePredictor>(
    image: &ToyImage,
    label: ShapeClass,
    predictor: &P,
    schedule: &AlphaSchedule,
    steps: usize,
) -> Result<VisualPrompt> {
    let x = encode_batch(&Matrix::row_vector(image.pixels()), &[label], predictor, schedule, steps)?;
    Ok(VisualPrompt { height: image.height(), width: image.width(), latent: x.into_vec() })
}

pub fn decode<P: NoisePredictor>(
    prompt: &VisualPrompt,
    label: ShapeClass,
    predictor: &P,
    schedule: &AlphaSchedule,
    steps: usize,
) -> Result<ToyImage> {
    let x = decode_batch(&Matrix::row_vector(&prompt.latent), &[label], predictor, schedule, steps)?;
    ToyImage::new(prompt.height, prompt.width, x.into_vec())
}
