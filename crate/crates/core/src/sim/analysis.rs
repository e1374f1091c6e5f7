//! Diagnostics over learned models: transition structure, the unconstrained
//! baseline comparison, K sweeps and RUL calibration.

use super::{simulate, PolicySource, SimConfig};
use crate::gmm::{fit_gmm, GmmConfig};
use crate::iohmm::{
    decode_states, filter, gem_fit, loglik, predict_rul, ActionSchedule, GemConfig, IohmmError,
    IohmmModel, Sequence, TrainingDataset,
};
use crate::pomdp::{
    build_pomdp, pbvi_solve, CostRates, FailureSpec, ObservationSource, PbviConfig, PomdpError,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionDiagnostics {
    pub avg_stay: f64,
    pub avg_forward: f64,
    pub avg_backward: f64,
}

/// Row averages over every action's matrix. The last state is excluded when
/// there is more than one, since it is absorbing by construction.
pub fn transition_diagnostics(model: &IohmmModel) -> TransitionDiagnostics {
    let rows = if model.n_states > 1 {
        model.n_states - 1
    } else {
        1
    };
    let (mut stay, mut fwd, mut back) = (0.0, 0.0, 0.0);
    for m in &model.transitions {
        for (l, row) in m.iter().take(rows).enumerate() {
            stay += row[l];
            fwd += row[l + 1..].iter().sum::<f64>();
            back += row[..l].iter().sum::<f64>();
        }
    }
    let n = (rows * model.transitions.len()) as f64;
    TransitionDiagnostics {
        avg_stay: stay / n,
        avg_forward: fwd / n,
        avg_backward: back / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    /// `classical` or `constrained`.
    pub variant: String,
    /// Action label of the operating condition, or `all`.
    pub condition: String,
    pub loglik: f64,
    /// Decreasing decoded transitions, averaged per sequence.
    pub reverse_steps: f64,
    /// Summed lower-triangular transition mass.
    pub backward_prob: f64,
    pub error: Option<String>,
}

impl CompareRow {
    fn failed(variant: &str, condition: &str, e: impl ToString) -> Self {
        Self {
            variant: variant.into(),
            condition: condition.into(),
            loglik: f64::NAN,
            reverse_steps: f64::NAN,
            backward_prob: f64::NAN,
            error: Some(e.to_string()),
        }
    }
}

fn reverse_steps(data: &TrainingDataset, model: &IohmmModel) -> Result<Vec<usize>, IohmmError> {
    data.sequences
        .iter()
        .map(|s| {
            let d = decode_states(s, model)?;
            Ok(d.labels.windows(2).filter(|w| w[1] < w[0]).count())
        })
        .collect()
}

/// Maximal runs of one action, relabelled as action 0. A run is marked failed
/// only when it ends a failed sequence.
fn condition_segments(data: &TrainingDataset, action: usize) -> TrainingDataset {
    let mut out = Vec::new();
    for s in &data.sequences {
        let mut t = 0;
        while t < s.len() {
            if s.actions[t] != action {
                t += 1;
                continue;
            }
            let start = t;
            while t < s.len() && s.actions[t] == action {
                t += 1;
            }
            out.push(Sequence {
                observations: s.observations[start..t].to_vec(),
                actions: vec![0; t - start],
                failed: s.failed && t == s.len(),
            });
        }
    }
    TrainingDataset::new(out)
}

fn fit_row(
    data: &TrainingDataset,
    actions: &[String],
    k: usize,
    cfg: &GemConfig,
) -> Result<(f64, Vec<usize>, f64), IohmmError> {
    let fit = gem_fit(data, actions, k, cfg)?;
    let ll = loglik(data, &fit.model)?;
    Ok((
        ll,
        reverse_steps(data, &fit.model)?,
        fit.model.backward_mass(),
    ))
}

fn mean_count(v: &[usize]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<usize>() as f64 / v.len() as f64
    }
}

/// Unconstrained per-condition HMMs against the constrained IOHMM.
///
/// One `classical` row per condition is followed by a `classical`/`all` row
/// pooling them (summed loglik and backward mass, reverse steps averaged over
/// all segments), then the `constrained`/`all` row.
pub fn compare_classical(
    data: &TrainingDataset,
    actions: &[String],
    k: usize,
    cfg: &GemConfig,
) -> Vec<CompareRow> {
    let classical_cfg = GemConfig {
        constrained: false,
        ..cfg.clone()
    };
    let mut rows = Vec::new();
    let mut pooled: Option<(f64, Vec<usize>, f64)> = Some((0.0, Vec::new(), 0.0));
    for (a, label) in actions.iter().enumerate() {
        let seg = condition_segments(data, a);
        if seg.sequences.is_empty() {
            continue;
        }
        match fit_row(&seg, std::slice::from_ref(label), k, &classical_cfg) {
            Ok((ll, rev, back)) => {
                rows.push(CompareRow {
                    variant: "classical".into(),
                    condition: label.clone(),
                    loglik: ll,
                    reverse_steps: mean_count(&rev),
                    backward_prob: back,
                    error: None,
                });
                if let Some(p) = pooled.as_mut() {
                    p.0 += ll;
                    p.1.extend(rev);
                    p.2 += back;
                }
            }
            Err(e) => {
                rows.push(CompareRow::failed("classical", label, &e));
                pooled = None;
            }
        }
    }
    rows.push(match pooled {
        Some((ll, rev, back)) if !rev.is_empty() => CompareRow {
            variant: "classical".into(),
            condition: "all".into(),
            loglik: ll,
            reverse_steps: mean_count(&rev),
            backward_prob: back,
            error: None,
        },
        Some(_) => CompareRow::failed("classical", "all", "no sequences"),
        None => CompareRow::failed("classical", "all", "a per-condition fit failed"),
    });
    let constrained_cfg = GemConfig {
        constrained: true,
        ..cfg.clone()
    };
    rows.push(match fit_row(data, actions, k, &constrained_cfg) {
        Ok((ll, rev, back)) => CompareRow {
            variant: "constrained".into(),
            condition: "all".into(),
            loglik: ll,
            reverse_steps: mean_count(&rev),
            backward_prob: back,
            error: None,
        },
        Err(e) => CompareRow::failed("constrained", "all", e),
    });
    rows
}

/// Everything besides K needed to go from training data to a simulated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInputs {
    pub gem: GemConfig,
    /// Number of observation symbols.
    pub gmm_k: usize,
    pub gmm: GmmConfig,
    pub rates: CostRates,
    pub gamma: f64,
    pub pbvi: PbviConfig,
    /// Draws per state when estimating the observation matrix.
    pub z_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub loglik: f64,
    pub mean_discounted: f64,
    pub mean_total: f64,
    pub pm_ratio: f64,
    pub avg_stay: f64,
    pub avg_forward: f64,
    pub avg_backward: f64,
    pub error: Option<String>,
}

fn sweep_one(
    data: &TrainingDataset,
    actions: &[String],
    k: usize,
    gmm: &crate::gmm::GmmModel,
    inputs: &SweepInputs,
    sim: &SimConfig,
) -> Result<SweepRow, PomdpError> {
    let fit = gem_fit(data, actions, k, &inputs.gem)?;
    let diag = transition_diagnostics(&fit.model);
    let source = ObservationSource::Gmm {
        model: gmm.clone(),
        samples: inputs.z_samples,
        seed: inputs.gem.seed,
    };
    let pomdp = build_pomdp(
        &fit.model,
        &source,
        &inputs.rates.table(k),
        inputs.gamma,
        &FailureSpec::LastHiddenState,
    )?;
    let mut b0 = vec![0.0; pomdp.n_states()];
    b0[0] = 1.0;
    let policy = pbvi_solve(&pomdp, &b0, &inputs.pbvi)?;
    let rep = simulate(&pomdp, &PolicySource::Pomdp(policy), sim)?;
    Ok(SweepRow {
        k,
        loglik: *fit.trace.last().expect("trace is never empty"),
        mean_discounted: rep.mean_discounted,
        mean_total: rep.mean_total,
        pm_ratio: rep.pm_ratio,
        avg_stay: diag.avg_stay,
        avg_forward: diag.avg_forward,
        avg_backward: diag.avg_backward,
        error: None,
    })
}

/// Trains, builds, solves and simulates one POMDP per K. The observation GMM
/// is fitted once on all observations; the last hidden state is failure.
/// Per-K failures are reported in the row's `error` field.
pub fn k_sweep(
    data: &TrainingDataset,
    actions: &[String],
    k_range: &[usize],
    inputs: &SweepInputs,
    sim: &SimConfig,
) -> Result<Vec<SweepRow>, PomdpError> {
    if k_range.is_empty() {
        return Err(PomdpError::InvalidArgument("k range is empty".into()));
    }
    let points: Vec<Vec<f64>> = data
        .sequences
        .iter()
        .flat_map(|s| s.observations.iter().cloned())
        .collect();
    let gmm = fit_gmm(&points, inputs.gmm_k, &inputs.gmm)?.model;
    Ok(k_range
        .iter()
        .map(|&k| {
            sweep_one(data, actions, k, &gmm, inputs, sim).unwrap_or_else(|e| SweepRow {
                k,
                loglik: f64::NAN,
                mean_discounted: f64::NAN,
                mean_total: f64::NAN,
                pm_ratio: f64::NAN,
                avg_stay: f64::NAN,
                avg_forward: f64::NAN,
                avg_backward: f64::NAN,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulRow {
    pub sequence: usize,
    pub t: usize,
    pub true_rul: usize,
    pub lower: usize,
    pub median: usize,
    pub upper: usize,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulReport {
    pub rows: Vec<RulRow>,
    /// Fraction of epochs whose true RUL lies inside `[lower, upper]`; 0 with no epochs.
    pub coverage: f64,
    pub n_epochs: usize,
    /// Sequences without an observed failure.
    pub n_excluded: usize,
}

/// Per-epoch RUL forecasts along run-to-failure sequences. The belief at
/// epoch `t` is the filtered posterior, and future epochs repeat the action
/// taken at `t`. The failure is taken to occur at the last recorded epoch.
pub fn rul_experiment(
    data: &TrainingDataset,
    model: &IohmmModel,
    horizon: usize,
    quantiles: [f64; 3],
) -> Result<RulReport, IohmmError> {
    let mut rows = Vec::new();
    let mut n_excluded = 0;
    for (i, s) in data.sequences.iter().enumerate() {
        if !s.failed {
            n_excluded += 1;
            continue;
        }
        let open = Sequence {
            failed: false,
            ..s.clone()
        };
        let beliefs = filter(&open, model)?;
        let n = s.len();
        for (t, b) in beliefs.iter().enumerate() {
            let f = predict_rul(
                b,
                model,
                &ActionSchedule::Fixed(s.actions[t]),
                horizon,
                quantiles,
            )?;
            rows.push(RulRow {
                sequence: i,
                t,
                true_rul: n - 1 - t,
                lower: f.lower,
                median: f.median,
                upper: f.upper,
                censored: f.censored,
            });
        }
    }
    let covered = rows
        .iter()
        .filter(|r| r.lower <= r.true_rul && r.true_rul <= r.upper)
        .count();
    let n_epochs = rows.len();
    Ok(RulReport {
        coverage: if n_epochs == 0 {
            0.0
        } else {
            covered as f64 / n_epochs as f64
        },
        rows,
        n_epochs,
        n_excluded,
    })
}
