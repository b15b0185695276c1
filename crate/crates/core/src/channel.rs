//! Four-node covert link: transmitter, receiver, friendly jammer, warden.
//!
//! The warden measures received power and declares a transmission when it
//! exceeds the threshold `ε`:
//!
//! ```text
//! H0 (idle):   y = κ² + D_jw^(−α_jw) P_j h_jw²
//! H1 (active): y = κ² + D_jw^(−α_jw) P_j h_jw² + D_tw^(−α_tw) P_t h_tw²
//! ```
//!
//! Its detection error probability is `ξ = P(y_H0 > ε) + P(y_H1 < ε)`,
//! estimated here by Monte Carlo over α-μ fading. The receiver treats the
//! jammer as Gaussian interference:
//! `SINR = D_tr^(−α_tr) P_t h_tr² / (κ² + D_jr^(−α_jr) P_j h_jr²)`, and
//! uncoded BPSK gives `BEP = Q(√(2 SINR))`.
//!
//! Monte-Carlo trials are grouped in blocks of [`BLOCK`]; block `b` draws
//! from sub-stream `b` of the seed, so results do not depend on the number
//! of worker threads.

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Trials per random sub-stream.
pub const BLOCK: usize = 1024;
/// Smallest trial count accepted by the DEP estimators.
pub const MIN_TRIALS: usize = 1000;

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

pub fn watts_to_dbw(watts: f64) -> f64 {
    10.0 * watts.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node coordinates in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePositions {
    pub transmitter: Point,
    pub receiver: Point,
    pub jammer: Point,
    pub warden: Point,
}

/// Path-loss exponents of the four links used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossExponents {
    pub tw: f64,
    pub tr: f64,
    pub jw: f64,
    pub jr: f64,
}

/// Large-scale link description: distances (m), path-loss exponents,
/// noise power `κ²` (W), warden threshold `ε` (W) and covertness
/// requirement `ξ_th`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub d_tw: f64,
    pub d_tr: f64,
    pub d_jw: f64,
    pub d_jr: f64,
    pub alpha: PathLossExponents,
    pub kappa_sq: f64,
    pub epsilon: f64,
    pub xi_th: f64,
}

impl LinkGeometry {
    pub fn from_positions(
        nodes: &NodePositions,
        alpha: PathLossExponents,
        kappa_sq: f64,
        epsilon: f64,
        xi_th: f64,
    ) -> Result<Self> {
        let pts = [nodes.transmitter, nodes.receiver, nodes.jammer, nodes.warden];
        for i in 0..4 {
            for j in i + 1..4 {
                if !(pts[i].distance(pts[j]) > 0.0) {
                    return Err(Error::Domain(format!("nodes {i} and {j} are co-located")));
                }
            }
        }
        let geom = LinkGeometry {
            d_tw: nodes.transmitter.distance(nodes.warden),
            d_tr: nodes.transmitter.distance(nodes.receiver),
            d_jw: nodes.jammer.distance(nodes.warden),
            d_jr: nodes.jammer.distance(nodes.receiver),
            alpha,
            kappa_sq,
            epsilon,
            xi_th,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("D_tw", self.d_tw), ("D_tr", self.d_tr), ("D_jw", self.d_jw), ("D_jr", self.d_jr)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {d}")));
            }
        }
        let a = self.alpha;
        for (name, v) in [("alpha_tw", a.tw), ("alpha_tr", a.tr), ("alpha_jw", a.jw), ("alpha_jr", a.jr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa_sq > 0.0 && self.kappa_sq.is_finite()) {
            return Err(Error::Domain(format!("kappa_sq must be positive, got {}", self.kappa_sq)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Domain(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.xi_th > 0.0 && self.xi_th <= 2.0) {
            return Err(Error::Domain(format!("xi_th must lie in (0, 2], got {}", self.xi_th)));
        }
        Ok(())
    }
}

/// α-μ fading: `h^α ~ Gamma(shape μ, scale ω/μ)`, so `E[h^α] = ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingParams {
    pub alpha: f64,
    pub mu: f64,
    pub omega: f64,
}

impl Default for FadingParams {
    fn default() -> Self {
        FadingParams { alpha: 2.0, mu: 4.0, omega: 1.0 }
    }
}

impl FadingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("mu", self.mu), ("omega", self.omega)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("fading {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Small-scale envelope gains of the four links for one fading block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingDraw {
    pub h_tw: f64,
    pub h_tr: f64,
    pub h_jw: f64,
    pub h_jr: f64,
}

impl FadingDraw {
    pub const UNIT: FadingDraw = FadingDraw { h_tw: 1.0, h_tr: 1.0, h_jw: 1.0, h_jr: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// H0: the transmitter is silent.
    Idle,
    /// H1: the transmitter is active.
    Active,
}

fn sample_block(params: &FadingParams, seed: u64, block: usize, n: usize) -> Vec<FadingDraw> {
    let gamma = Gamma::new(params.mu, params.omega / params.mu).expect("validated parameters");
    let mut r = rng::substream(seed, block as u64);
    let inv = 1.0 / params.alpha;
    let mut env = || {
        let g: f64 = gamma.sample(&mut r);
        g.powf(inv)
    };
    (0..n)
        .map(|_| FadingDraw { h_tw: env(), h_tr: env(), h_jw: env(), h_jr: env() })
        .collect()
}

/// `n` independent fading draws; identical `(params, seed, n)` give identical draws,
/// and a shorter run is a prefix of a longer one.
pub fn sample_fading(params: &FadingParams, seed: u64, n: usize) -> Result<Vec<FadingDraw>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one fading draw".into()));
    }
    let blocks = n.div_ceil(BLOCK);
    let chunks: Vec<Vec<FadingDraw>> = (0..blocks)
        .into_par_iter()
        .map(|b| sample_block(params, seed, b, BLOCK.min(n - b * BLOCK)))
        .collect();
    Ok(chunks.concat())
}

/// `D^(−α) · P · h²`.
pub fn received_power(p_tx: f64, distance: f64, exponent: f64, h: f64) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    if p_tx < 0.0 || h < 0.0 {
        return Err(Error::Domain("power and envelope must be non-negative".into()));
    }
    Ok(path_gain(distance, exponent) * p_tx * h * h)
}

#[inline]
fn path_gain(distance: f64, exponent: f64) -> f64 {
    distance.powf(-exponent)
}

/// Power observed by the warden under `hypothesis`.
pub fn warden_observation(geom: &LinkGeometry, p_t: f64, p_j: f64, draw: &FadingDraw, hypothesis: Hypothesis) -> f64 {
    let idle = geom.kappa_sq + path_gain(geom.d_jw, geom.alpha.jw) * p_j * draw.h_jw * draw.h_jw;
    match hypothesis {
        Hypothesis::Idle => idle,
        Hypothesis::Active => idle + path_gain(geom.d_tw, geom.alpha.tw) * p_t * draw.h_tw * draw.h_tw,
    }
}

pub fn receiver_sinr(geom: &LinkGeometry, p_t: f64, p_j: f64, draw: &FadingDraw) -> f64 {
    let signal = path_gain(geom.d_tr, geom.alpha.tr) * p_t * draw.h_tr * draw.h_tr;
    let interference = geom.kappa_sq + path_gain(geom.d_jr, geom.alpha.jr) * p_j * draw.h_jr * draw.h_jr;
    signal / interference
}

/// Gaussian tail `Q(x) = erfc(x/√2)/2`.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Uncoded BPSK bit error probability `Q(√(2·sinr)) = erfc(√sinr)/2`.
pub fn bpsk_bep(sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::Domain(format!("SINR must be non-negative, got {sinr}")));
    }
    Ok(0.5 * libm::erfc(sinr.sqrt()))
}

/// Warden error rates with the standard error of the DEP estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepEstimate {
    pub p_fa: f64,
    pub p_md: f64,
    pub dep: f64,
    pub se_dep: f64,
}

/// DEP plus receiver-side averages, all over one fading stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub p_fa: f64,
    pub p_md: f64,
    pub dep: f64,
    pub se_dep: f64,
    /// Ergodic rate `E[log₂(1 + SINR)]`, bits/s/Hz.
    pub covert_rate: f64,
    pub mean_bep: f64,
}

impl DetectionResult {
    pub fn is_covert(&self, xi_th: f64) -> bool {
        self.dep >= xi_th
    }
}

/// A frozen set of fading draws. Evaluating many power settings against the
/// same samples gives common-random-number comparisons, and results equal
/// those of [`link_statistics`] with the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingSamples {
    draws: Vec<FadingDraw>,
}

#[derive(Default, Clone, Copy)]
struct Partial {
    fa: u64,
    md: u64,
    dep_sq: u64,
    rate: f64,
    bep: f64,
}

impl FadingSamples {
    pub fn draw(params: &FadingParams, n: usize, seed: u64) -> Result<Self> {
        if n < MIN_TRIALS {
            return Err(Error::Config(format!("Monte-Carlo trials must be at least {MIN_TRIALS}, got {n}")));
        }
        Ok(FadingSamples { draws: sample_fading(params, seed, n)? })
    }

    /// Wraps explicit draws (e.g. deterministic unit fading).
    pub fn from_draws(draws: Vec<FadingDraw>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Config("need at least one fading draw".into()));
        }
        if draws.iter().any(|d| [d.h_tw, d.h_tr, d.h_jw, d.h_jr].iter().any(|h| !(*h >= 0.0))) {
            return Err(Error::Domain("fading envelopes must be non-negative".into()));
        }
        Ok(FadingSamples { draws })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[FadingDraw] {
        &self.draws
    }

    fn accumulate(&self, geom: &LinkGeometry, p_t: f64, p_j: f64, receiver: bool) -> Result<Partial> {
        geom.validate()?;
        if !(p_t >= 0.0 && p_j >= 0.0) {
            return Err(Error::Domain(format!("powers must be non-negative, got P_t={p_t}, P_j={p_j}")));
        }
        let partials: Vec<Partial> = self
            .draws
            .par_chunks(BLOCK)
            .map(|chunk| {
                let mut p = Partial::default();
                for d in chunk {
                    let h0 = warden_observation(geom, p_t, p_j, d, Hypothesis::Idle);
                    let h1 = warden_observation(geom, p_t, p_j, d, Hypothesis::Active);
                    let fa = (h0 > geom.epsilon) as u64;
                    let md = (h1 < geom.epsilon) as u64;
                    p.fa += fa;
                    p.md += md;
                    p.dep_sq += (fa + md) * (fa + md);
                    if receiver {
                        let sinr = receiver_sinr(geom, p_t, p_j, d);
                        p.rate += (1.0 + sinr).log2();
                        p.bep += 0.5 * libm::erfc(sinr.sqrt());
                    }
                }
                p
            })
            .collect();
        Ok(partials.into_iter().fold(Partial::default(), |a, b| Partial {
            fa: a.fa + b.fa,
            md: a.md + b.md,
            dep_sq: a.dep_sq + b.dep_sq,
            rate: a.rate + b.rate,
            bep: a.bep + b.bep,
        }))
    }

    fn dep_estimate(&self, p: &Partial) -> DepEstimate {
        let n = self.draws.len() as f64;
        let p_fa = p.fa as f64 / n;
        let p_md = p.md as f64 / n;
        let dep = p_fa + p_md;
        let var = if self.draws.len() > 1 { (p.dep_sq as f64 / n - dep * dep).max(0.0) * n / (n - 1.0) } else { 0.0 };
        DepEstimate { p_fa, p_md, dep, se_dep: (var / n).sqrt() }
    }

    pub fn detection(&self, geom: &LinkGeometry, p_t: f64, p_j: f64) -> Result<DepEstimate> {
        let p = self.accumulate(geom, p_t, p_j, false)?;
        Ok(self.dep_estimate(&p))
    }

    pub fn statistics(&self, geom: &LinkGeometry, p_t: f64, p_j: f64) -> Result<DetectionResult> {
        let p = self.accumulate(geom, p_t, p_j, true)?;
        let d = self.dep_estimate(&p);
        let n = self.draws.len() as f64;
        Ok(DetectionResult {
            p_fa: d.p_fa,
            p_md: d.p_md,
            dep: d.dep,
            se_dep: d.se_dep,
            covert_rate: p.rate / n,
            mean_bep: p.bep / n,
        })
    }
}

/// Monte-Carlo warden error rates over `n_mc` fading blocks.
pub fn detection_error_probability(
    geom: &LinkGeometry,
    p_t: f64,
    p_j: f64,
    fading: &FadingParams,
    n_mc: usize,
    seed: u64,
) -> Result<DepEstimate> {
    FadingSamples::draw(fading, n_mc, seed)?.detection(geom, p_t, p_j)
}

/// DEP, ergodic rate and mean BEP on one shared fading stream.
pub fn link_statistics(
    geom: &LinkGeometry,
    p_t: f64,
    p_j: f64,
    fading: &FadingParams,
    n_mc: usize,
    seed: u64,
) -> Result<DetectionResult> {
    FadingSamples::draw(fading, n_mc, seed)?.statistics(geom, p_t, p_j)
}
