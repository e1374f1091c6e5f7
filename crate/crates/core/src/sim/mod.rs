//! Monte-Carlo policy evaluation and model diagnostics.
//!
//! Run `i` draws from a ChaCha stream seeded with `seed ^ i`, so reports do
//! not depend on how runs are scheduled across threads.

mod analysis;

pub use analysis::{
    compare_classical, k_sweep, rul_experiment, transition_diagnostics, CompareRow, RulReport,
    RulRow, SweepInputs, SweepRow, TransitionDiagnostics,
};

use crate::gaussian::Gaussian;
use crate::gmm::GmmModel;
use crate::iohmm::sample_index;
use crate::pomdp::{policy_value, Policy, PomdpError, PomdpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which rule picks the action at each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Alpha-vector policy driven by the filtered belief.
    Pomdp(Policy),
    /// The same action every epoch.
    Fixed(usize),
    /// `pm` once the belief mass on states `>= from_state` reaches
    /// `threshold`, `action` otherwise.
    Threshold {
        action: usize,
        pm: usize,
        from_state: usize,
        threshold: f64,
    },
}

/// Gaussian emission of one POMDP state in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEmission {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Symbols drawn from the POMDP's observation matrix.
    #[default]
    Symbol,
    /// Feature vectors drawn per state and discretised by the GMM.
    Features {
        emissions: Vec<StateEmission>,
        gmm: GmmModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub observation: ObservationMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            n_runs: 100,
            seed: 0,
            observation: ObservationMode::Symbol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCount {
    pub action: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub horizon: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Undiscounted reward per run.
    pub totals: Vec<f64>,
    /// Discounted return per run.
    pub discounted: Vec<f64>,
    pub mean_total: f64,
    /// Sample standard deviation (n - 1) of `totals`.
    pub std_total: f64,
    pub mean_discounted: f64,
    pub std_discounted: f64,
    /// PM epochs over all decision epochs.
    pub pm_ratio: f64,
    /// Entries into the failure state, summed over runs.
    pub failures: u64,
    pub action_histogram: Vec<ActionCount>,
}

struct RunOutcome {
    total: f64,
    discounted: f64,
    failures: u64,
    counts: Vec<u64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn pick(source: &PolicySource, belief: &[f64]) -> usize {
    match source {
        PolicySource::Pomdp(p) => policy_value(p, belief).1,
        PolicySource::Fixed(a) => *a,
        PolicySource::Threshold {
            action,
            pm,
            from_state,
            threshold,
        } => {
            if belief[*from_state..].iter().sum::<f64>() >= *threshold {
                *pm
            } else {
                *action
            }
        }
    }
}

enum Observer {
    Symbol,
    Features {
        emissions: Vec<Gaussian>,
        gmm: crate::gmm::Mixture,
    },
}

fn one_run(
    model: &PomdpModel,
    source: &PolicySource,
    observer: &Observer,
    horizon: usize,
    seed: u64,
) -> RunOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_states();
    let tracks_belief = !matches!(source, PolicySource::Fixed(_));
    let mut s = 0;
    let mut belief = vec![0.0; n];
    belief[0] = 1.0;
    let mut out = RunOutcome {
        total: 0.0,
        discounted: 0.0,
        failures: 0,
        counts: vec![0; model.n_actions()],
    };
    let mut weight = 1.0;
    for _ in 0..horizon {
        let a = pick(source, &belief);
        let r = model.r[a][s];
        out.total += r;
        out.discounted += weight * r;
        weight *= model.gamma;
        out.counts[a] += 1;

        let next = sample_index(&model.transitions[a][s], &mut rng);
        if Some(next) == model.failure_state && Some(s) != model.failure_state {
            out.failures += 1;
        }
        let o = match observer {
            Observer::Symbol => sample_index(&model.observations[a][next], &mut rng),
            Observer::Features { emissions, gmm } => {
                let x = emissions[next].sample(&mut rng);
                gmm.discretize(&x)
                    .expect("emission and mixture dimensions checked")
            }
        };
        if tracks_belief {
            belief = match model.update_unchecked(&belief, a, o) {
                Ok(b) => b,
                Err(_) => model.predict(&belief, a),
            };
        }
        s = next;
    }
    out
}

/// Evaluates `source` on `model` by simulation.
pub fn simulate(
    model: &PomdpModel,
    source: &PolicySource,
    cfg: &SimConfig,
) -> Result<SimReport, PomdpError> {
    model.validate()?;
    if cfg.horizon == 0 || cfg.n_runs == 0 {
        return Err(PomdpError::InvalidArgument(
            "horizon and n_runs must be at least 1".into(),
        ));
    }
    let n = model.n_states();
    let label = match source {
        PolicySource::Pomdp(p) => {
            if p.alphas.is_empty()
                || p.alphas
                    .iter()
                    .any(|a| a.values.len() != n || a.action >= model.n_actions())
            {
                return Err(PomdpError::InvalidArgument(
                    "policy does not match the model".into(),
                ));
            }
            "pomdp".to_string()
        }
        PolicySource::Fixed(a) => {
            if *a >= model.n_actions() {
                return Err(PomdpError::InvalidArgument(format!("unknown action {a}")));
            }
            model.actions[*a].clone()
        }
        PolicySource::Threshold {
            action,
            pm,
            from_state,
            threshold,
        } => {
            if *action >= model.n_actions() || *pm >= model.n_actions() || *from_state >= n {
                return Err(PomdpError::InvalidArgument(
                    "threshold rule references unknown indices".into(),
                ));
            }
            format!(
                "threshold({},{},{from_state},{threshold})",
                model.actions[*action], model.actions[*pm]
            )
        }
    };
    let observer = match &cfg.observation {
        ObservationMode::Symbol => Observer::Symbol,
        ObservationMode::Features { emissions, gmm } => {
            if emissions.len() != n || gmm.k != model.n_observations() {
                return Err(PomdpError::Dimension(
                    "feature mode needs one emission per state and one GMM component per symbol"
                        .into(),
                ));
            }
            let emissions = emissions
                .iter()
                .map(|e| Gaussian::new(&e.mean, &e.covariance))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PomdpError::InvalidModel(e.to_string()))?;
            if emissions.iter().any(|g| g.dim() != gmm.dim()) {
                return Err(PomdpError::Dimension(
                    "emission and GMM dimensions differ".into(),
                ));
            }
            Observer::Features {
                emissions,
                gmm: gmm.prepare()?,
            }
        }
    };

    let runs: Vec<RunOutcome> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|i| one_run(model, source, &observer, cfg.horizon, cfg.seed ^ i as u64))
        .collect();

    let totals: Vec<f64> = runs.iter().map(|r| r.total).collect();
    let discounted: Vec<f64> = runs.iter().map(|r| r.discounted).collect();
    let mut counts = vec![0u64; model.n_actions()];
    for r in &runs {
        for (c, x) in counts.iter_mut().zip(&r.counts) {
            *c += x;
        }
    }
    let epochs = (cfg.horizon * cfg.n_runs) as f64;
    let pm_ratio = model.pm_action.map_or(0.0, |pm| counts[pm] as f64 / epochs);
    let (mean_total, std_total) = mean_std(&totals);
    let (mean_discounted, std_discounted) = mean_std(&discounted);
    Ok(SimReport {
        policy: label,
        horizon: cfg.horizon,
        n_runs: cfg.n_runs,
        seed: cfg.seed,
        mean_total,
        std_total,
        mean_discounted,
        std_discounted,
        pm_ratio,
        failures: runs.iter().map(|r| r.failures).sum(),
        action_histogram: model
            .actions
            .iter()
            .zip(counts)
            .map(|(a, count)| ActionCount {
                action: a.clone(),
                count,
            })
            .collect(),
        totals,
        discounted,
    })
}
