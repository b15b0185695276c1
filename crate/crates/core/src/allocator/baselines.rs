use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AllocationEnv, CovertEnv, PreparedCondition, ResourceScheme};
use crate::{rng, Error, Result};

/// Search effort of [`oracle_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Points per power axis of the coarse grid.
    pub grid: usize,
    /// Zoom levels around the best coarse points.
    pub refine_levels: usize,
    pub refine_top: usize,
    /// Points per axis of each zoomed grid.
    pub refine_grid: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { grid: 41, refine_levels: 4, refine_top: 4, refine_grid: 9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub scheme: ResourceScheme,
    pub reward: f64,
    /// No evaluated scheme satisfied both constraints.
    pub infeasible: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    scheme: ResourceScheme,
    reward: f64,
    energy: f64,
    feasible: bool,
}

/// Reward descending, then energy, then `(P_t, P_j, T)` ascending.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.reward != b.reward {
        return a.reward > b.reward;
    }
    if a.energy != b.energy {
        return a.energy < b.energy;
    }
    (a.scheme.p_t, a.scheme.p_j, a.scheme.steps) < (b.scheme.p_t, b.scheme.p_j, b.scheme.steps)
}

/// Best step count for fixed powers: exact scan over every affordable integer.
fn best_for_powers(env: &CovertEnv, c: &PreparedCondition, p_t: f64, p_j: f64) -> Result<Candidate> {
    let b = &env.bounds;
    let cap = env.energy.max_steps(p_t, p_j).floor();
    let violation = |steps| {
        let scheme = ResourceScheme { p_t, p_j, steps };
        Candidate { scheme, reward: env.violation_reward, energy: env.energy.cost(&scheme), feasible: false }
    };
    if cap < b.t_min as f64 {
        return Ok(violation(b.t_min));
    }
    let stats = c.samples.statistics(&c.vector.geometry, p_t, p_j)?;
    if stats.dep < c.vector.geometry.xi_th {
        return Ok(violation(b.t_min));
    }
    let t_hi = (cap as usize).min(b.t_max);
    let mut best: Option<Candidate> = None;
    for steps in b.t_min..=t_hi {
        let scheme = ResourceScheme { p_t, p_j, steps };
        let cand = Candidate {
            scheme,
            reward: env.surrogate.query(stats.mean_bep, steps as f64),
            energy: env.energy.cost(&scheme),
            feasible: true,
        };
        if best.as_ref().is_none_or(|cur| better(&cand, cur)) {
            best = Some(cand);
        }
    }
    Ok(best.expect("non-empty step range"))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn evaluate_grid(env: &CovertEnv, c: &PreparedCondition, pts: &[(f64, f64)]) -> Result<Vec<Candidate>> {
    pts.par_iter().map(|&(p_t, p_j)| best_for_powers(env, c, p_t, p_j)).collect()
}

/// Exhaustive search over the given power axes (every integer step count
/// is scanned), refined `config.refine_levels` times around the best points.
pub fn oracle_over(
    env: &CovertEnv,
    c: &PreparedCondition,
    p_t_axis: &[f64],
    p_j_axis: &[f64],
    config: &OracleConfig,
) -> Result<OracleResult> {
    if p_t_axis.is_empty() || p_j_axis.is_empty() {
        return Err(Error::Config("oracle axes must be non-empty".into()));
    }
    let pts: Vec<(f64, f64)> = p_t_axis.iter().flat_map(|&t| p_j_axis.iter().map(move |&j| (t, j))).collect();
    let mut all = evaluate_grid(env, c, &pts)?;
    let mut cell = (
        if p_t_axis.len() > 1 { (p_t_axis[p_t_axis.len() - 1] - p_t_axis[0]) / (p_t_axis.len() - 1) as f64 } else { 0.0 },
        if p_j_axis.len() > 1 { (p_j_axis[p_j_axis.len() - 1] - p_j_axis[0]) / (p_j_axis.len() - 1) as f64 } else { 0.0 },
    );
    for _ in 0..config.refine_levels {
        if cell.0 == 0.0 && cell.1 == 0.0 {
            break;
        }
        let mut ranked: Vec<Candidate> = all.iter().copied().filter(|c| c.feasible).collect();
        ranked.sort_by(|a, b| if better(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        let mut zoom = Vec::new();
        for top in ranked.iter().take(config.refine_top) {
            let s = top.scheme;
            let ts = linspace((s.p_t - cell.0).max(0.0), (s.p_t + cell.0).min(env.bounds.p_t_max), config.refine_grid);
            let js = linspace((s.p_j - cell.1).max(0.0), (s.p_j + cell.1).min(env.bounds.p_j_max), config.refine_grid);
            zoom.extend(ts.iter().flat_map(|&t| js.iter().map(move |&j| (t, j))));
        }
        if zoom.is_empty() {
            break;
        }
        all.extend(evaluate_grid(env, c, &zoom)?);
        let shrink = 2.0 / (config.refine_grid.max(2) - 1) as f64;
        cell = (cell.0 * shrink, cell.1 * shrink);
    }
    let evaluations = all.len();
    let best = all.iter().copied().filter(|c| c.feasible).reduce(|a, b| if better(&b, &a) { b } else { a });
    Ok(match best {
        Some(b) => OracleResult { scheme: b.scheme, reward: b.reward, infeasible: false, evaluations },
        None => {
            let scheme = ResourceScheme { p_t: p_t_axis[0], p_j: p_j_axis[0], steps: env.bounds.t_min };
            OracleResult { scheme, reward: env.violation_reward, infeasible: true, evaluations }
        }
    })
}

/// Grid oracle over the full power box.
pub fn oracle_solve(env: &CovertEnv, c: &PreparedCondition, config: &OracleConfig) -> Result<OracleResult> {
    if config.grid < 8 {
        return Err(Error::Config(format!("oracle grid needs at least 8 points per axis, got {}", config.grid)));
    }
    let ts = linspace(0.0, env.bounds.p_t_max, config.grid);
    let js = linspace(0.0, env.bounds.p_j_max, config.grid);
    oracle_over(env, c, &ts, &js, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillClimbResult {
    pub action: Vec<f64>,
    pub reward: f64,
    /// Best reward after each accepted move.
    pub accepted: Vec<f64>,
}

/// Random restarts plus Gaussian local moves in action space, accepting
/// strict improvements. `iters` counts reward evaluations.
pub fn hillclimb_baseline<E: AllocationEnv>(
    env: &E,
    c: &E::Condition,
    iters: usize,
    restarts: usize,
    step_sigma: f64,
    seed: u64,
) -> Result<HillClimbResult> {
    if iters == 0 || restarts == 0 || restarts > iters {
        return Err(Error::Config("hill climbing needs 1 <= restarts <= iters".into()));
    }
    let normal = Normal::new(0.0, step_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::seeded(seed);
    let dim = env.action_dim();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut accepted = Vec::new();
    let per_restart = iters / restarts;
    for k in 0..restarts {
        let budget = per_restart + usize::from(k < iters % restarts);
        let mut x: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..=1.0)).collect();
        let mut fx = env.reward(c, &x)?;
        for _ in 1..budget {
            let y: Vec<f64> = x.iter().map(|v| (v + normal.sample(&mut r)).clamp(-1.0, 1.0)).collect();
            let fy = env.reward(c, &y)?;
            if fy > fx {
                x = y;
                fx = fy;
                if best.as_ref().is_none_or(|b| fx > b.1) {
                    accepted.push(fx);
                }
            }
        }
        if best.as_ref().is_none_or(|b| fx > b.1) {
            best = Some((x, fx));
        }
    }
    let (action, reward) = best.expect("at least one restart");
    Ok(HillClimbResult { action, reward, accepted })
}
