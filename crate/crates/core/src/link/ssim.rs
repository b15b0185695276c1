use serde::{Deserialize, Serialize};

use crate::diffusion::ToyImage;
use crate::{Error, Result};

/// Structural-similarity settings: square window, data range `L`,
/// `C1 = (k1 L)²`, `C2 = (k2 L)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    pub window: usize,
    pub data_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    /// 8×8 window over `[-1, 1]` pixels.
    fn default() -> Self {
        SsimParams { window: 8, data_range: 2.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Mean SSIM over all `window × window` patches at stride 1, with uniform
/// weights and population (1/N) moments.
pub fn ssim(a: &ToyImage, b: &ToyImage, params: &SsimParams) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape("ssim image size", a.height() * a.width(), b.height() * b.width()));
    }
    let w = params.window;
    if w == 0 || w > a.height() || w > a.width() {
        return Err(Error::Config(format!("ssim window {w} does not fit a {}x{} image", a.height(), a.width())));
    }
    if !(params.c1() > 0.0 && params.c2() > 0.0) {
        return Err(Error::Config("ssim stability constants must be positive".into()));
    }
    let (c1, c2) = (params.c1(), params.c2());
    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=a.height() - w {
        for c0 in 0..=a.width() - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + w {
                for c in c0..c0 + w {
                    let (x, y) = (a.at(r, c), b.at(r, c));
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
