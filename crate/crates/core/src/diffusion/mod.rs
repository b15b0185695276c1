//! Conditional DDIM prompt codec.
//!
//! A noise predictor `ε_θ(x_t, t, label)` is trained with the simple
//! noise-regression loss on [`noising_sample`] pairs. The trained predictor
//! then serves twice: [`encode`] runs the deterministic DDIM chain upward
//! from the clean image to `x_T` (the visual prompt), and [`decode`] runs it
//! back down under the received label.

mod data;
mod ddim;
mod denoiser;
mod schedule;
mod train;

pub use data::{random_shape, render_shape, Dataset, SemanticCondition, ShapeClass, ShapeMeta, ToyImage};
pub use ddim::{
    ddim_forward_step, ddim_reverse_step, decode, decode_batch, decode_batch_unclamped, encode, encode_batch,
    predicted_clean, AnalyticDenoiser, NoisePredictor, VisualPrompt, ZeroPredictor,
};
pub use denoiser::{read_codec, time_embedding, write_codec, CodecFile, Denoiser, DenoiserConfig};
pub use schedule::AlphaSchedule;
pub use train::{DenoiserTrainer, LossPoint, TrainConfig};

use crate::{Error, Result};

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · noise`.
pub fn noising_sample(x0: &[f64], t: usize, noise: &[f64], schedule: &AlphaSchedule) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.t_train() {
        return Err(Error::Domain(format!("noising step must be in 1..={}, got {t}", schedule.t_train())));
    }
    if noise.len() != x0.len() {
        return Err(Error::shape("noise length", x0.len(), noise.len()));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| sa * x + sb * e).collect())
}
