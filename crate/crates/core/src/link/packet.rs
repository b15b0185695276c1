//! Prompt packets: the quantized visual latent plus a repetition-coded label.
//!
//! Wire layout (all multi-byte fields little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CSPP"
//! 4       1     version (1)
//! 5       2     height (u16)
//! 7       2     width (u16)
//! 9       1     q_bits, bits per latent value (2..=16)
//! 10      1     repetition factor R of each label bit (odd)
//! 11      1     label_bits
//! 12      8     clip_lo (f64)
//! 20      8     clip_hi (f64)
//! 28      4     payload_bits = height*width*q_bits + label_bits*R (u32)
//! 32      ..    payload, ceil(payload_bits/8) bytes
//! ```
//!
//! Payload bits are packed MSB-first. The first `height*width*q_bits` bits
//! are the latent codes, row-major, each code MSB-first. Then follow the
//! label bits, MSB-first, each repeated `R` times consecutively. Padding
//! bits in the last byte are zero. The header travels error-free; only the
//! payload is exposed to the channel.

use serde::{Deserialize, Serialize};

use crate::diffusion::{ShapeClass, VisualPrompt};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSPP";
const HEADER_LEN: usize = 32;

/// Bits needed to index the label alphabet.
pub const LABEL_BITS: u8 = 2;

/// Quantization and label-protection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkParams {
    pub q_bits: u8,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub repetition: u8,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams { q_bits: 8, clip_lo: -4.0, clip_hi: 4.0, repetition: 9 }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.q_bits) {
            return Err(Error::Config(format!("q_bits must be in 2..=16, got {}", self.q_bits)));
        }
        if !(self.clip_lo < self.clip_hi && self.clip_lo.is_finite() && self.clip_hi.is_finite()) {
            return Err(Error::Config(format!("bad clip range [{}, {}]", self.clip_lo, self.clip_hi)));
        }
        if self.repetition == 0 || self.repetition.is_multiple_of(2) {
            return Err(Error::Config(format!("repetition must be odd, got {}", self.repetition)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.clip_hi - self.clip_lo) / (1u32 << self.q_bits) as f64
    }

    /// Mid-rise code of `v` after clipping.
    pub fn quantize_value(&self, v: f64) -> u16 {
        let levels = 1u32 << self.q_bits;
        let idx = ((v - self.clip_lo) / self.step()).floor();
        if idx.is_nan() {
            return (levels / 2) as u16;
        }
        idx.clamp(0.0, (levels - 1) as f64) as u16
    }

    pub fn dequantize_value(&self, code: u16) -> f64 {
        self.clip_lo + (code as f64 + 0.5) * self.step()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketHeader {
    pub height: u16,
    pub width: u16,
    pub params: LinkParams,
    pub label_bits: u8,
}

impl PacketHeader {
    pub fn latent_bits(&self) -> usize {
        self.height as usize * self.width as usize * self.params.q_bits as usize
    }

    pub fn payload_bits(&self) -> usize {
        self.latent_bits() + self.label_bits as usize * self.params.repetition as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPacket {
    header: PacketHeader,
    /// Packed payload, MSB-first.
    payload: Vec<u8>,
}

fn get_bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] >> (7 - i % 8) & 1 == 1
}

fn set_bit(bytes: &mut [u8], i: usize, v: bool) {
    let mask = 1u8 << (7 - i % 8);
    if v {
        bytes[i / 8] |= mask;
    } else {
        bytes[i / 8] &= !mask;
    }
}

impl PromptPacket {
    /// Quantizes `prompt` and appends the repetition-coded `label`.
    pub fn build(prompt: &VisualPrompt, label: ShapeClass, params: &LinkParams) -> Result<Self> {
        params.validate()?;
        if prompt.latent.len() != prompt.height * prompt.width {
            return Err(Error::shape("latent size", prompt.height * prompt.width, prompt.latent.len()));
        }
        let (height, width) = (u16::try_from(prompt.height), u16::try_from(prompt.width));
        let (Ok(height), Ok(width)) = (height, width) else {
            return Err(Error::Config("prompt too large for packet header".into()));
        };
        let header = PacketHeader { height, width, params: *params, label_bits: LABEL_BITS };
        let mut payload = vec![0u8; header.payload_bits().div_ceil(8)];
        let q = params.q_bits as usize;
        for (i, &v) in prompt.latent.iter().enumerate() {
            let code = params.quantize_value(v);
            for b in 0..q {
                set_bit(&mut payload, i * q + b, code >> (q - 1 - b) & 1 == 1);
            }
        }
        let mut pos = header.latent_bits();
        let idx = label.index();
        for b in 0..LABEL_BITS as usize {
            let bit = idx >> (LABEL_BITS as usize - 1 - b) & 1 == 1;
            for _ in 0..params.repetition {
                set_bit(&mut payload, pos, bit);
                pos += 1;
            }
        }
        Ok(PromptPacket { header, payload })
    }

    pub fn header(&self) -> &PacketHeader {
        &self.header
    }

    pub fn payload_bits(&self) -> usize {
        self.header.payload_bits()
    }

    pub fn bit(&self, i: usize) -> bool {
        get_bit(&self.payload, i)
    }

    pub(crate) fn flip(&mut self, i: usize) {
        self.payload[i / 8] ^= 1 << (7 - i % 8);
    }

    pub fn codes(&self) -> Vec<u16> {
        let q = self.header.params.q_bits as usize;
        let n = self.header.height as usize * self.header.width as usize;
        (0..n)
            .map(|i| (0..q).fold(0u16, |acc, b| acc << 1 | get_bit(&self.payload, i * q + b) as u16))
            .collect()
    }

    /// Dequantized latent.
    pub fn visual_prompt(&self) -> VisualPrompt {
        let p = self.header.params;
        VisualPrompt {
            height: self.header.height as usize,
            width: self.header.width as usize,
            latent: self.codes().into_iter().map(|c| p.dequantize_value(c)).collect(),
        }
    }

    /// Label by majority vote over each repeated bit. An index outside the
    /// alphabet (impossible with 2 label bits and 4 classes) wraps around.
    pub fn label(&self) -> ShapeClass {
        let r = self.header.params.repetition as usize;
        let mut pos = self.header.latent_bits();
        let mut idx = 0usize;
        for _ in 0..self.header.label_bits {
            let ones = (pos..pos + r).filter(|&i| get_bit(&self.payload, i)).count();
            idx = idx << 1 | (2 * ones > r) as usize;
            pos += r;
        }
        ShapeClass::ALL[idx % ShapeClass::COUNT]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(1);
        out.extend_from_slice(&h.height.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.push(h.params.q_bits);
        out.push(h.params.repetition);
        out.push(h.label_bits);
        out.extend_from_slice(&h.params.clip_lo.to_le_bytes());
        out.extend_from_slice(&h.params.clip_hi.to_le_bytes());
        out.extend_from_slice(&(h.payload_bits() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a prompt packet".into()));
        }
        if bytes[4] != 1 {
            return Err(Error::Format(format!("unsupported packet version {}", bytes[4])));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let params = LinkParams { q_bits: bytes[9], repetition: bytes[10], clip_lo: f64_at(12), clip_hi: f64_at(20) };
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        let header = PacketHeader { height: u16_at(5), width: u16_at(7), params, label_bits: bytes[11] };
        let declared = u32::from_le_bytes(bytes[28..32].try_into().unwrap()) as usize;
        if declared != header.payload_bits() {
            return Err(Error::Format(format!(
                "payload length {declared} disagrees with header ({})",
                header.payload_bits()
            )));
        }
        let payload = bytes[HEADER_LEN..].to_vec();
        if payload.len() != declared.div_ceil(8) {
            return Err(Error::Format("truncated or oversized payload".into()));
        }
        Ok(PromptPacket { header, payload })
    }
}
