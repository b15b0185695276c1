use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ddim::NoisePredictor;
use super::{AlphaSchedule, ShapeClass};
use crate::nn::{read_checkpoint, write_checkpoint, Activation, Adam, DenseNet, Matrix};
use crate::{Error, Result};

/// Architecture of the MLP noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub height: usize,
    pub width: usize,
    pub time_dim: usize,
    pub label_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { height: 16, width: 16, time_dim: 16, label_dim: 8, hidden: 256, hidden_layers: 2 }
    }
}

impl DenoiserConfig {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn input_dim(&self) -> usize {
        self.pixels() + self.time_dim + self.label_dim
    }
}

/// Sinusoidal embedding of a diffusion step: `sin(t ω_i)` then `cos(t ω_i)`,
/// `ω_i = 10000^(−i/(dim/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(i as f64) / half as f64 * 10_000f64.ln()).exp();
        let a = t as f64 * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

/// Noise predictor: flattened pixels ‖ time embedding ‖ learned label
/// embedding, fed through an MLP with SiLU hidden layers and linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    /// The MLP proper.
    pub core: DenseNet,
    /// One-hot label → embedding (single linear layer).
    pub label_embed: DenseNet,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Self {
        let mut widths = vec![(config.hidden, Activation::Silu); config.hidden_layers];
        widths.push((config.pixels(), Activation::Linear));
        let core = DenseNet::new(config.input_dim(), &widths, seed);
        let label_embed = DenseNet::new(
            ShapeClass::COUNT,
            &[(config.label_dim, Activation::Linear)],
            crate::rng::derive_seed(seed, 0x1abe1),
        );
        Denoiser { config, core, label_embed }
    }

    /// Embedding vector of a label under the current parameters.
    pub fn condition_embedding(&self, label: ShapeClass) -> Vec<f64> {
        self.label_embed.forward_vec(&label.one_hot()).expect("one-hot width matches")
    }

    pub(crate) fn one_hot_batch(labels: &[ShapeClass]) -> Matrix {
        Matrix::from_rows(&labels.iter().map(|l| l.one_hot()).collect::<Vec<_>>())
    }

    /// Assembles network inputs from noisy pixels, steps and label embeddings.
    pub(crate) fn assemble_input(&self, x: &Matrix, steps: &[usize], label_emb: &Matrix) -> Result<Matrix> {
        let cfg = &self.config;
        if x.cols() != cfg.pixels() {
            return Err(Error::shape("denoiser pixels", cfg.pixels(), x.cols()));
        }
        let mut input = Matrix::zeros(x.rows(), cfg.input_dim());
        for r in 0..x.rows() {
            let row = input.row_mut(r);
            row[..cfg.pixels()].copy_from_slice(x.row(r));
            row[cfg.pixels()..cfg.pixels() + cfg.time_dim].copy_from_slice(&time_embedding(steps[r], cfg.time_dim));
            row[cfg.pixels() + cfg.time_dim..].copy_from_slice(label_emb.row(r));
        }
        Ok(input)
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x: &Matrix, t: usize, labels: &[ShapeClass]) -> Result<Matrix> {
        if labels.len() != x.rows() {
            return Err(Error::shape("labels per batch row", x.rows(), labels.len()));
        }
        let emb = self.label_embed.forward(&Self::one_hot_batch(labels))?;
        let input = self.assemble_input(x, &vec![t; x.rows()], &emb)?;
        self.core.forward(&input)
    }
}

/// Everything needed to reproduce or resume a codec training run.
#[derive(Debug, Clone)]
pub struct CodecFile {
    pub denoiser: Denoiser,
    pub schedule: AlphaSchedule,
    pub beta_range: (f64, f64),
    /// Optimizer steps already taken.
    pub step: u64,
    pub optimizers: Option<(Adam, Adam)>,
}

/// Codec container: `"CSCD"`, u32 version (1), u32 height, width, time_dim,
/// label_dim, hidden, hidden_layers, T_train, f64 beta_start, beta_end,
/// u64 step, then the core and label-embedding network checkpoints.
/// Little-endian throughout.
pub fn write_codec<W: Write>(mut w: W, file: &CodecFile) -> Result<()> {
    let c = &file.denoiser.config;
    w.write_all(b"CSCD")?;
    w.write_all(&1u32.to_le_bytes())?;
    for v in [c.height, c.width, c.time_dim, c.label_dim, c.hidden, c.hidden_layers, file.schedule.t_train()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&file.beta_range.0.to_le_bytes())?;
    w.write_all(&file.beta_range.1.to_le_bytes())?;
    w.write_all(&file.step.to_le_bytes())?;
    let (oc, oe) = match &file.optimizers {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    write_checkpoint(&mut w, &file.denoiser.core, oc)?;
    write_checkpoint(&mut w, &file.denoiser.label_embed, oe)?;
    Ok(())
}

pub fn read_codec<R: Read>(mut r: R) -> Result<CodecFile> {
    let mut head = [0u8; 4 + 4 + 7 * 4 + 8 + 8 + 8];
    r.read_exact(&mut head)?;
    if &head[..4] != b"CSCD" {
        return Err(Error::Format("not a codec file (bad magic)".into()));
    }
    let u = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if u(0) != 1 {
        return Err(Error::Format(format!("unsupported codec version {}", u(0))));
    }
    let config = DenoiserConfig {
        height: u(1),
        width: u(2),
        time_dim: u(3),
        label_dim: u(4),
        hidden: u(5),
        hidden_layers: u(6),
    };
    let t_train = u(7);
    let f = |off: usize| f64::from_le_bytes(head[off..off + 8].try_into().unwrap());
    let beta_range = (f(36), f(44));
    let step = u64::from_le_bytes(head[52..60].try_into().unwrap());
    let core = read_checkpoint(&mut r)?;
    let embed = read_checkpoint(&mut r)?;
    if core.net.input_dim() != config.input_dim() || core.net.output_dim() != config.pixels() {
        return Err(Error::Format("codec network does not match its header".into()));
    }
    let optimizers = match (core.optimizer, embed.optimizer) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    Ok(CodecFile {
        denoiser: Denoiser { config, core: core.net, label_embed: embed.net },
        schedule: AlphaSchedule::linear(t_train, beta_range.0, beta_range.1)?,
        beta_range,
        step,
        optimizers,
    })
}
