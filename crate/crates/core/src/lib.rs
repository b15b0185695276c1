//! Desk-scale simulator for covert semantic communication.
//!
//! A transmitter encodes an image into a multi-modal prompt (a class label
//! plus the DDIM-inverted noise map of the image), sends the prompt as bits
//! over a fading link that a friendly jammer hides from a warden, and the
//! receiver regenerates the image with the same conditional DDIM. A
//! diffusion-policy allocator picks transmit power, jamming power and the
//! number of diffusion steps.
//!
//! Modules:
//!
//! * [`channel`]: path loss, α-μ fading, warden detection error probability,
//!   receiver SINR, BPSK bit error probability, covert rate.
//! * [`nn`]: dense networks with explicit backward passes and Adam.
//! * [`diffusion`]: noise schedule, toy image data, denoiser training,
//!   DDIM encode/decode.
//! * [`link`]: prompt quantization, packet layout, bit-flip channel, SSIM.
//! * [`allocator`]: the diffusion-policy resource allocator, its critic, and
//!   the grid-oracle and hill-climbing baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod channel;
pub mod diffusion;
mod error;
pub mod link;
pub mod nn;
pub mod rng;

pub use error::{Error, Result, ShapeMismatch};
