//! Point-based value iteration.

use super::{dot, Belief, PomdpError, PomdpModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub expansions: usize,
    pub sweeps: usize,
    /// Largest value change over the belief set in the final sweep.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub alphas: Vec<AlphaVector>,
    pub beliefs: Vec<Belief>,
    #[serde(default)]
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PbviConfig {
    /// Improve stops once no belief's value moves by this much in a sweep.
    pub improve_tol: f64,
    pub max_improve_sweeps: usize,
    pub max_expansions: usize,
    /// Expansion stops adding points beyond this many beliefs.
    pub max_beliefs: usize,
    /// Seed the belief set with every point-mass belief besides `b0`.
    pub include_corners: bool,
}

impl Default for PbviConfig {
    fn default() -> Self {
        Self {
            improve_tol: 1e-4,
            max_improve_sweeps: 2000,
            max_expansions: 8,
            max_beliefs: 1000,
            include_corners: true,
        }
    }
}

/// Value and action of the best alpha vector at `b`; ties go to the lowest index.
pub fn policy_value(policy: &Policy, b: &[f64]) -> (f64, usize) {
    let (i, v) = best_alpha(&policy.alphas, b);
    (v, policy.alphas[i].action)
}

fn best_alpha(alphas: &[AlphaVector], b: &[f64]) -> (usize, f64) {
    let mut best = (0, dot(&alphas[0].values, b));
    for (i, a) in alphas.iter().enumerate().skip(1) {
        let v = dot(&a.values, b);
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Drops exact duplicates and vectors pointwise dominated by another.
pub fn prune(alphas: Vec<AlphaVector>) -> Vec<AlphaVector> {
    let dominates =
        |a: &AlphaVector, b: &AlphaVector| a.values.iter().zip(&b.values).all(|(x, y)| x >= y);
    let keep: Vec<bool> = (0..alphas.len())
        .map(|i| {
            !alphas.iter().enumerate().any(|(j, other)| {
                j != i
                    && dominates(other, &alphas[i])
                    && (other.values != alphas[i].values || j < i)
            })
        })
        .collect();
    alphas
        .into_iter()
        .zip(keep)
        .filter_map(|(a, k)| k.then_some(a))
        .collect()
}

/// `X(s,a,s') Z(s',a,o)` laid out `[a][o][s][s']`.
struct Kernel {
    m: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Kernel {
    fn new(model: &PomdpModel) -> Self {
        let n = model.n_states();
        let m = (0..model.n_actions())
            .map(|a| {
                (0..model.n_observations())
                    .map(|o| {
                        (0..n)
                            .map(|s| {
                                (0..n)
                                    .map(|t| {
                                        model.transitions[a][s][t] * model.observations[a][t][o]
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { m }
    }

    /// `g[a][o][s] = sum_s' X(s,a,s') Z(s',a,o) alpha(s')` for one alpha.
    fn project(&self, alpha: &[f64]) -> Vec<Vec<Vec<f64>>> {
        self.m
            .iter()
            .map(|per_o| {
                per_o
                    .iter()
                    .map(|rows| rows.iter().map(|row| dot(row, alpha)).collect())
                    .collect()
            })
            .collect()
    }
}

fn backup_with(b: &[f64], projections: &[Vec<Vec<Vec<f64>>>], model: &PomdpModel) -> AlphaVector {
    let n = model.n_states();
    let mut best: Option<(f64, AlphaVector)> = None;
    for a in 0..model.n_actions() {
        let mut beta = model.r[a].clone();
        for o in 0..model.n_observations() {
            let mut pick = 0;
            let mut pick_v = dot(&projections[0][a][o], b);
            for (i, g) in projections.iter().enumerate().skip(1) {
                let v = dot(&g[a][o], b);
                if v > pick_v {
                    pick = i;
                    pick_v = v;
                }
            }
            let g = &projections[pick][a][o];
            for s in 0..n {
                beta[s] += model.gamma * g[s];
            }
        }
        let v = dot(&beta, b);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((
                v,
                AlphaVector {
                    values: beta,
                    action: a,
                },
            ));
        }
    }
    best.expect("model has at least one action").1
}

/// Point-based Bellman backup of `v` at belief `b`.
pub fn backup(b: &[f64], v: &[AlphaVector], model: &PomdpModel) -> Result<AlphaVector, PomdpError> {
    model.check_belief(b)?;
    if v.is_empty() {
        return Err(PomdpError::InvalidArgument("alpha set is empty".into()));
    }
    let kernel = Kernel::new(model);
    let projections: Vec<_> = v.iter().map(|a| kernel.project(&a.values)).collect();
    Ok(backup_with(b, &projections, model))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Adds, for each belief, the one-step successor farthest from the current set.
pub fn expand(beliefs: &[Belief], model: &PomdpModel) -> Vec<Belief> {
    let mut out = beliefs.to_vec();
    for b in beliefs {
        let mut best: Option<(f64, Belief)> = None;
        for a in 0..model.n_actions() {
            for (o, &p) in model.observation_probs(b, a).iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let Ok(next) = model.update_unchecked(b, a, o) else {
                    continue;
                };
                let d = out
                    .iter()
                    .map(|x| distance(x, &next))
                    .fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                    best = Some((d, next));
                }
            }
        }
        if let Some((d, next)) = best {
            if d > 1e-9 {
                out.push(next);
            }
        }
    }
    out
}

/// Runs backup sweeps over `beliefs` until values settle. Vectors of the
/// previous set that still win at some belief are retained, so every sweep
/// is non-decreasing on the belief set.
fn improve(
    model: &PomdpModel,
    kernel: &Kernel,
    beliefs: &[Belief],
    mut v: Vec<AlphaVector>,
    cfg: &PbviConfig,
    stats: &mut SolveStats,
) -> Vec<AlphaVector> {
    stats.converged = false;
    for _ in 0..cfg.max_improve_sweeps {
        let projections: Vec<_> = v.par_iter().map(|a| kernel.project(&a.values)).collect();
        let fresh: Vec<AlphaVector> = beliefs
            .par_iter()
            .map(|b| backup_with(b, &projections, model))
            .collect();
        let mut next = fresh.clone();
        let mut residual: f64 = 0.0;
        for (b, f) in beliefs.iter().zip(&fresh) {
            let (i, old) = best_alpha(&v, b);
            let new = dot(&f.values, b);
            if old > new {
                next.push(v[i].clone());
            } else {
                residual = residual.max(new - old);
            }
        }
        v = prune(next);
        stats.sweeps += 1;
        stats.residual = residual;
        if residual < cfg.improve_tol {
            stats.converged = true;
            break;
        }
    }
    v
}

/// Point-based value iteration from `b0`.
pub fn pbvi_solve(model: &PomdpModel, b0: &[f64], cfg: &PbviConfig) -> Result<Policy, PomdpError> {
    model.validate()?;
    model.check_belief(b0)?;
    if cfg.improve_tol <= 0.0 || cfg.max_improve_sweeps == 0 {
        return Err(PomdpError::InvalidArgument(
            "improve_tol and max_improve_sweeps must be positive".into(),
        ));
    }
    let n = model.n_states();
    let min_r = model
        .r
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut v = vec![AlphaVector {
        values: vec![min_r / (1.0 - model.gamma); n],
        action: 0,
    }];

    let mut beliefs = vec![b0.to_vec()];
    if cfg.include_corners {
        for s in 0..n {
            let mut e = vec![0.0; n];
            e[s] = 1.0;
            if beliefs.iter().all(|b| distance(b, &e) > 1e-9) {
                beliefs.push(e);
            }
        }
    }

    let kernel = Kernel::new(model);
    let mut stats = SolveStats::default();
    loop {
        v = improve(model, &kernel, &beliefs, v, cfg, &mut stats);
        if stats.expansions >= cfg.max_expansions || beliefs.len() >= cfg.max_beliefs {
            break;
        }
        let mut grown = expand(&beliefs, model);
        grown.truncate(cfg.max_beliefs);
        if grown.len() == beliefs.len() {
            break;
        }
        beliefs = grown;
        stats.expansions += 1;
    }
    log::debug!(
        "pbvi: {} alphas over {} beliefs after {} sweeps",
        v.len(),
        beliefs.len(),
        stats.sweeps
    );
    Ok(Policy {
        alphas: v,
        beliefs,
        stats,
    })
}
