use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_fading, FadingDraw, FadingParams, LinkGeometry, NodePositions, PathLossExponents, Point};
use crate::{rng, Error, Result};

/// Number of entries in a condition vector.
pub const CONDITION_DIM: usize = 15;

/// Environment state seen by the allocator: link geometry, thresholds and
/// the current fading realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub geometry: LinkGeometry,
    pub draw: FadingDraw,
}

impl ConditionVector {
    /// `[D_tw, D_tr, D_jw, D_jr, α_tw, α_tr, α_jw, α_jr, κ², ε, ξ_th, h_tw, h_tr, h_jw, h_jr]`.
    pub fn to_array(&self) -> [f64; CONDITION_DIM] {
        let g = &self.geometry;
        let d = &self.draw;
        [
            g.d_tw, g.d_tr, g.d_jw, g.d_jr, g.alpha.tw, g.alpha.tr, g.alpha.jw, g.alpha.jr, g.kappa_sq, g.epsilon,
            g.xi_th, d.h_tw, d.h_tr, d.h_jw, d.h_jr,
        ]
    }

    /// Entry-wise affine map of [`to_array`](Self::to_array) onto `[-1, 1]`,
    /// clamped at the normalization bounds.
    pub fn normalized(&self, ranges: &ConditionRanges) -> Vec<f64> {
        self.to_array()
            .iter()
            .zip(ranges.bounds())
            .map(|(&v, (lo, hi))| (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Sampling ranges for training and held-out conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionRanges {
    /// Side of the square deployment area (m).
    pub area: f64,
    pub min_separation: f64,
    pub path_loss: (f64, f64),
    pub kappa_sq: (f64, f64),
    pub epsilon: (f64, f64),
    pub xi_th: (f64, f64),
    /// Upper normalization bound for fading envelopes.
    pub h_max: f64,
}

impl Default for ConditionRanges {
    fn default() -> Self {
        ConditionRanges {
            area: 20.0,
            min_separation: 1.0,
            path_loss: (1.0, 2.0),
            kappa_sq: (0.5, 2.0),
            epsilon: (10.0, 100.0),
            xi_th: (0.9, 0.99),
            h_max: 3.0,
        }
    }
}

impl ConditionRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !(self.area > 0.0 && self.min_separation > 0.0 && self.min_separation < self.area / 2.0) {
            return Err(Error::Config("area must exceed twice the minimum separation".into()));
        }
        if !(ok(self.path_loss) && self.path_loss.0 > 0.0) {
            return Err(Error::Config("path_loss range must be positive and increasing".into()));
        }
        if !(ok(self.kappa_sq) && self.kappa_sq.0 > 0.0) {
            return Err(Error::Config("kappa_sq range must be positive and increasing".into()));
        }
        if !(ok(self.epsilon) && self.epsilon.0 >= 0.0) {
            return Err(Error::Config("epsilon range must be non-negative and increasing".into()));
        }
        if !(ok(self.xi_th) && self.xi_th.0 > 0.0 && self.xi_th.1 <= 2.0) {
            return Err(Error::Config("xi_th range must lie in (0, 2]".into()));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::Config("h_max must be positive".into()));
        }
        Ok(())
    }

    /// Normalization bounds per condition entry.
    pub fn bounds(&self) -> [(f64, f64); CONDITION_DIM] {
        let d = (0.0, self.area * std::f64::consts::SQRT_2);
        let h = (0.0, self.h_max);
        let a = self.path_loss;
        [d, d, d, d, a, a, a, a, self.kappa_sq, self.epsilon, self.xi_th, h, h, h, h]
    }

    /// Draws node positions (rejection-sampled for the minimum separation),
    /// link parameters and one fading realization.
    pub fn sample(&self, fading: &FadingParams, seed: u64) -> Result<ConditionVector> {
        self.validate()?;
        let mut r = rng::substream(seed, 0);
        let point = |r: &mut rand_chacha::ChaCha8Rng| Point::new(r.random_range(0.0..self.area), r.random_range(0.0..self.area));
        let nodes = loop {
            let pts = [point(&mut r), point(&mut r), point(&mut r), point(&mut r)];
            let separated = (0..4).all(|i| (i + 1..4).all(|j| pts[i].distance(pts[j]) >= self.min_separation));
            if separated {
                break NodePositions { transmitter: pts[0], receiver: pts[1], jammer: pts[2], warden: pts[3] };
            }
        };
        let mut uniform = |(lo, hi): (f64, f64)| r.random_range(lo..hi);
        let alpha = PathLossExponents {
            tw: uniform(self.path_loss),
            tr: uniform(self.path_loss),
            jw: uniform(self.path_loss),
            jr: uniform(self.path_loss),
        };
        let (kappa_sq, epsilon, xi_th) = (uniform(self.kappa_sq), uniform(self.epsilon), uniform(self.xi_th));
        let geometry = LinkGeometry::from_positions(&nodes, alpha, kappa_sq, epsilon, xi_th)?;
        let draw = sample_fading(fading, rng::derive_seed(seed, 1), 1)?[0];
        Ok(ConditionVector { geometry, draw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    proptest::proptest! {
        #[test]
        fn sampled_conditions_respect_ranges(seed in proptest::prelude::any::<u64>()) {
            let ranges = ConditionRanges::default();
            let c = ranges.sample(&FadingParams::default(), seed).unwrap();
            let g = c.geometry;
            for d in [g.d_tw, g.d_tr, g.d_jw, g.d_jr] {
                proptest::prop_assert!(d >= 1.0 && d <= 20.0 * 2f64.sqrt());
            }
            for a in [g.alpha.tw, g.alpha.tr, g.alpha.jw, g.alpha.jr] {
                proptest::prop_assert!((1.0..2.0).contains(&a));
            }
            proptest::prop_assert!((0.5..2.0).contains(&g.kappa_sq));
            proptest::prop_assert!((10.0..100.0).contains(&g.epsilon));
            proptest::prop_assert!((0.9..0.99).contains(&g.xi_th));
            let n = c.normalized(&ranges);
            proptest::prop_assert_eq!(n.len(), CONDITION_DIM);
            proptest::prop_assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = ConditionRanges::default();
        let f = FadingParams::default();
        assert_eq!(r.sample(&f, 3).unwrap(), r.sample(&f, 3).unwrap());
        assert_ne!(r.sample(&f, 3).unwrap(), r.sample(&f, 4).unwrap());
    }

    #[test]
    fn normalization_endpoints() {
        let r = ConditionRanges::default();
        let mut c = r.sample(&FadingParams::default(), 1).unwrap();
        c.geometry.kappa_sq = 0.5;
        c.geometry.epsilon = 100.0;
        c.draw.h_tw = 10.0;
        let n = c.normalized(&r);
        assert_eq!(n[8], -1.0);
        assert_eq!(n[9], 1.0);
        assert_eq!(n[11], 1.0);
    }
}
