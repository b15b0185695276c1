//! Prompt transport: quantization, a memoryless binary channel, and SSIM
//! scoring of the regenerated image.

mod packet;
mod ssim;

pub use packet::{LinkParams, PacketHeader, PromptPacket, LABEL_BITS};
pub use ssim::{ssim, SsimParams};

use rand::Rng;
use rayon::prelude::*;

use crate::diffusion::{decode_batch, encode_batch, AlphaSchedule, NoisePredictor, ShapeClass, ToyImage, VisualPrompt};
use crate::nn::Matrix;
use crate::{rng, Error, Result};

/// Quantizes a visual prompt and attaches the protected label.
pub fn quantize(prompt: &VisualPrompt, label: ShapeClass, params: &LinkParams) -> Result<PromptPacket> {
    PromptPacket::build(prompt, label, params)
}

/// Received prompt and majority-voted label.
pub fn dequantize(packet: &PromptPacket) -> (VisualPrompt, ShapeClass) {
    (packet.visual_prompt(), packet.label())
}

/// Flips every payload bit independently with probability `bep`.
///
/// Bit `i` flips when the `i`-th uniform of the seeded stream falls below
/// `bep`, so for a fixed seed the flipped set grows monotonically with `bep`.
pub fn transmit(packet: &PromptPacket, bep: f64, seed: u64) -> Result<PromptPacket> {
    if !(0.0..=0.5).contains(&bep) {
        return Err(Error::Domain(format!("bit error probability must be in [0, 0.5], got {bep}")));
    }
    let mut out = packet.clone();
    let mut r = rng::seeded(seed);
    for i in 0..packet.payload_bits() {
        let u: f64 = r.random();
        if u < bep {
            out.flip(i);
        }
    }
    Ok(out)
}

/// Probability that a majority vote over `repetition` copies decodes a bit
/// wrongly: `Pr[Binomial(R, bep) > R/2]`.
pub fn label_bit_error(bep: f64, repetition: u32) -> f64 {
    let r = repetition as i32;
    let mut total = 0.0;
    let mut coeff = 1.0f64;
    for k in 0..=r {
        if k > 0 {
            coeff = coeff * (r - k + 1) as f64 / k as f64;
        }
        if 2 * k > r {
            total += coeff * bep.powi(k) * (1.0 - bep).powi(r - k);
        }
    }
    total
}

/// Codec and link settings shared by every regeneration.
#[derive(Debug, Clone, Copy)]
pub struct Regenerator<'a, P> {
    pub predictor: &'a P,
    pub schedule: &'a AlphaSchedule,
    pub link: LinkParams,
    pub ssim: SsimParams,
}

/// Per-image SSIM scores for one `(bep, T_inf)` setting.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    pub bep: f64,
    pub t_inf: usize,
    pub scores: Vec<f64>,
    pub label_errors: usize,
}

impl BatchScores {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.scores.len() as f64;
        (self.scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }
}

impl<P: NoisePredictor + Sync> Regenerator<'_, P> {
    /// encode → quantize → transmit → dequantize → decode → ssim.
    pub fn end_to_end(&self, x0: &ToyImage, label: ShapeClass, t_inf: usize, bep: f64, seed: u64) -> Result<(ToyImage, f64)> {
        let mut batch = self.run_batch(std::slice::from_ref(x0), &[label], t_inf, &[bep], seed)?;
        let (mut images, scores) = batch.pop().expect("one bep requested");
        Ok((images.pop().expect("one image"), scores.scores[0]))
    }

    /// Scores `images` at every `bep`, reusing one encoding. Image `i` uses
    /// channel seed `derive_seed(seed, i)` at every `bep`.
    pub fn score_batch(
        &self,
        images: &[ToyImage],
        labels: &[ShapeClass],
        t_inf: usize,
        beps: &[f64],
        seed: u64,
    ) -> Result<Vec<BatchScores>> {
        Ok(self.run_batch(images, labels, t_inf, beps, seed)?.into_iter().map(|(_, s)| s).collect())
    }

    fn run_batch(
        &self,
        images: &[ToyImage],
        labels: &[ShapeClass],
        t_inf: usize,
        beps: &[f64],
        seed: u64,
    ) -> Result<Vec<(Vec<ToyImage>, BatchScores)>> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::shape("labels per image", images.len(), labels.len()));
        }
        let (h, w) = (images[0].height(), images[0].width());
        if images.iter().any(|im| im.height() != h || im.width() != w) {
            return Err(Error::Config("images in a batch must share one size".into()));
        }
        let rows: Vec<Vec<f64>> = images.iter().map(|im| im.pixels().to_vec()).collect();
        let clean = Matrix::from_rows(&rows);
        let latent = encode_batch(&clean, labels, self.predictor, self.schedule, t_inf)?;
        let packets = latent
            .iter_rows()
            .zip(labels)
            .map(|(row, &label)| {
                let prompt = VisualPrompt { height: h, width: w, latent: row.to_vec() };
                quantize(&prompt, label, &self.link)
            })
            .collect::<Result<Vec<_>>>()?;
        beps.par_iter()
            .map(|&bep| {
                let mut received = Vec::with_capacity(packets.len());
                let mut got_labels = Vec::with_capacity(packets.len());
                for (i, pk) in packets.iter().enumerate() {
                    let (prompt, label) = dequantize(&transmit(pk, bep, rng::derive_seed(seed, i as u64))?);
                    received.push(prompt.latent);
                    got_labels.push(label);
                }
                let decoded = decode_batch(&Matrix::from_rows(&received), &got_labels, self.predictor, self.schedule, t_inf)?;
                let mut out = Vec::with_capacity(images.len());
                let mut scores = Vec::with_capacity(images.len());
                for (row, src) in decoded.iter_rows().zip(images) {
                    let img = ToyImage::from_clamped(h, w, row)?;
                    scores.push(ssim(src, &img, &self.ssim)?);
                    out.push(img);
                }
                let label_errors = got_labels.iter().zip(labels).filter(|(a, b)| a != b).count();
                Ok((out, BatchScores { bep, t_inf, scores, label_errors }))
            })
            .collect()
    }
}
