use serde::{Deserialize, Serialize};

use crate::diffusion::{NoisePredictor, ShapeClass, ToyImage};
use crate::link::Regenerator;
use crate::{Error, Result};

/// Where a surrogate grid came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateProvenance {
    /// Hash or name of the codec checkpoint.
    pub checkpoint_id: String,
    pub n_images: usize,
    pub seed: u64,
}

/// Mean end-to-end SSIM tabulated over `(bep, T)`, interpolated bilinearly
/// in `(log₁₀ bep, T)` and clamped to the grid edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimSurrogate {
    pub beps: Vec<f64>,
    pub steps: Vec<usize>,
    /// `values[i][j]` is the mean SSIM at `beps[i]`, `steps[j]`.
    pub values: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub provenance: SurrogateProvenance,
    /// Every column is non-increasing in bep.
    pub monotone_in_bep: bool,
}

fn locate(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&v| v <= x);
    let lo = hi - 1;
    (lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo]))
}

impl SsimSurrogate {
    pub fn from_grid(
        beps: Vec<f64>,
        steps: Vec<usize>,
        values: Vec<Vec<f64>>,
        std: Vec<Vec<f64>>,
        provenance: SurrogateProvenance,
    ) -> Result<Self> {
        if beps.is_empty() || steps.is_empty() {
            return Err(Error::Config("surrogate grids must be non-empty".into()));
        }
        if beps.iter().any(|&b| !(b > 0.0 && b <= 0.5)) || beps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("surrogate bep grid must be strictly increasing within (0, 0.5]".into()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("surrogate step grid must be strictly increasing".into()));
        }
        for table in [&values, &std] {
            if table.len() != beps.len() || table.iter().any(|row| row.len() != steps.len()) {
                return Err(Error::shape("surrogate table", beps.len() * steps.len(), table.iter().map(Vec::len).sum()));
            }
        }
        if values.iter().flatten().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Domain("surrogate values must lie in [-1, 1]".into()));
        }
        let monotone_in_bep = (0..steps.len()).all(|j| values.windows(2).all(|w| w[1][j] <= w[0][j]));
        Ok(SsimSurrogate { beps, steps, values, std, provenance, monotone_in_bep })
    }

    /// Tabulates [`Regenerator::score_batch`] over the grid.
    pub fn build<P: NoisePredictor + Sync>(
        regen: &Regenerator<'_, P>,
        images: &[ToyImage],
        labels: &[ShapeClass],
        beps: &[f64],
        steps: &[usize],
        seed: u64,
        checkpoint_id: &str,
    ) -> Result<Self> {
        let mut values = vec![vec![0.0; steps.len()]; beps.len()];
        let mut std = values.clone();
        for (j, &t) in steps.iter().enumerate() {
            for (i, cell) in regen.score_batch(images, labels, t, beps, seed)?.into_iter().enumerate() {
                values[i][j] = cell.mean();
                std[i][j] = cell.std();
            }
        }
        let provenance = SurrogateProvenance { checkpoint_id: checkpoint_id.to_string(), n_images: images.len(), seed };
        Self::from_grid(beps.to_vec(), steps.to_vec(), values, std, provenance)
    }

    pub fn query(&self, bep: f64, steps: f64) -> f64 {
        let log_axis: Vec<f64> = self.beps.iter().map(|b| b.log10()).collect();
        let t_axis: Vec<f64> = self.steps.iter().map(|&t| t as f64).collect();
        let x = if bep > 0.0 { bep.log10() } else { f64::NEG_INFINITY };
        let (i0, i1, u) = locate(&log_axis, x);
        let (j0, j1, v) = locate(&t_axis, steps);
        let f = |i: usize, j: usize| self.values[i][j];
        (1.0 - u) * ((1.0 - v) * f(i0, j0) + v * f(i0, j1)) + u * ((1.0 - v) * f(i1, j0) + v * f(i1, j1))
    }
}
