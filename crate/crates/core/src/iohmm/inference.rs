use super::{IohmmError, IohmmModel, Sequence, TrainingDataset};
use crate::gaussian::Gaussian;
use rayon::prelude::*;

/// Smoothed posteriors of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `gamma[t][k] = P(S_t = k | O, A)`
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][l][k] = P(S_t = l, S_{t+1} = k | O, A)`, length `T - 1`
    pub xi: Vec<Vec<Vec<f64>>>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub labels: Vec<usize>,
    pub posteriors: Vec<Vec<f64>>,
}

pub(crate) fn check_actions(
    seq: &Sequence,
    model: &IohmmModel,
    index: usize,
) -> Result<(), IohmmError> {
    if seq.is_empty() {
        return Err(IohmmError::EmptySequence(index));
    }
    if seq.actions.len() != seq.observations.len() {
        return Err(IohmmError::Dimension(format!(
            "sequence {index}: {} observations but {} actions",
            seq.observations.len(),
            seq.actions.len()
        )));
    }
    if let Some(t) = seq.actions.iter().position(|&a| a >= model.n_actions()) {
        return Err(IohmmError::InvalidAction {
            sequence: index,
            t,
            action: seq.actions[t],
        });
    }
    let d = model.dim();
    if let Some(t) = seq.observations.iter().position(|o| o.len() != d) {
        return Err(IohmmError::Dimension(format!(
            "sequence {index}, t={t}: model expects {d} features"
        )));
    }
    Ok(())
}

/// `log p(O_t | S_t = k, A_t)`, with the failure pin applied to the last row.
fn log_emissions(seq: &Sequence, model: &IohmmModel, dens: &[Vec<Gaussian>]) -> Vec<Vec<f64>> {
    let k = model.n_states;
    let mut out: Vec<Vec<f64>> = seq
        .observations
        .iter()
        .zip(&seq.actions)
        .map(|(o, &a)| {
            dens[model.group_of(a)]
                .iter()
                .map(|g| g.log_pdf(o))
                .collect()
        })
        .collect();
    if seq.failed {
        let last = out.last_mut().expect("non-empty sequence");
        for v in last.iter_mut().take(k - 1) {
            *v = f64::NEG_INFINITY;
        }
    }
    out
}

struct Forward {
    /// Filtered state distributions.
    alpha: Vec<Vec<f64>>,
    /// `ln c_t`, the log of each step's normaliser.
    log_scale: Vec<f64>,
}

fn forward_pass(
    seq: &Sequence,
    model: &IohmmModel,
    loge: &[Vec<f64>],
    index: usize,
) -> Result<Forward, IohmmError> {
    let k = model.n_states;
    let t_len = seq.len();
    let mut alpha = Vec::with_capacity(t_len);
    let mut log_scale = Vec::with_capacity(t_len);
    let mut pred = model.initial.clone();
    let mut w = vec![0.0; k];
    for t in 0..t_len {
        if t > 0 {
            let a = &model.transitions[seq.actions[t]];
            let prev: &Vec<f64> = &alpha[t - 1];
            pred.iter_mut().for_each(|p| *p = 0.0);
            for (l, &pl) in prev.iter().enumerate() {
                if pl == 0.0 {
                    continue;
                }
                for (p, &alk) in pred.iter_mut().zip(&a[l]) {
                    *p += pl * alk;
                }
            }
        }
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            w[j] = if pred[j] > 0.0 {
                pred[j].ln() + loge[t][j]
            } else {
                f64::NEG_INFINITY
            };
            m = m.max(w[j]);
        }
        if !m.is_finite() {
            return Err(IohmmError::ZeroLikelihood(index));
        }
        let row: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = row.iter().sum();
        log_scale.push(m + s.ln());
        alpha.push(row.into_iter().map(|x| x / s).collect());
    }
    Ok(Forward { alpha, log_scale })
}

pub(crate) fn forward_backward_with(
    seq: &Sequence,
    model: &IohmmModel,
    dens: &[Vec<Gaussian>],
    index: usize,
) -> Result<Posteriors, IohmmError> {
    check_actions(seq, model, index)?;
    let k = model.n_states;
    let t_len = seq.len();
    let loge = log_emissions(seq, model, dens);
    let Forward { alpha, log_scale } = forward_pass(seq, model, &loge, index)?;

    // beta[t][l] is the scaled backward message; zero wherever alpha is zero
    let mut beta = vec![vec![0.0; k]; t_len];
    beta[t_len - 1] = alpha[t_len - 1]
        .iter()
        .map(|&a| if a > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let mut xi = vec![vec![vec![0.0; k]; k]; t_len.saturating_sub(1)];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let a = &model.transitions[seq.actions[t + 1]];
        // emission of t+1 divided by its normaliser, restricted to reachable states
        let e_next: Vec<f64> = (0..k)
            .map(|j| {
                if alpha[t + 1][j] > 0.0 {
                    (loge[t + 1][j] - log_scale[t + 1]).exp() * beta[t + 1][j]
                } else {
                    0.0
                }
            })
            .collect();
        for l in 0..k {
            if alpha[t][l] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for j in 0..k {
                let v = a[l][j] * e_next[j];
                if v != 0.0 {
                    acc += v;
                    xi[t][l][j] = alpha[t][l] * v;
                }
            }
            beta[t][l] = acc;
        }
    }

    let gamma: Vec<Vec<f64>> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| {
            let row: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|x| x / s).collect()
        })
        .collect();
    for slice in xi.iter_mut() {
        let s: f64 = slice.iter().flatten().sum();
        slice.iter_mut().flatten().for_each(|x| *x /= s);
    }
    Ok(Posteriors {
        gamma,
        xi,
        loglik: log_scale.iter().sum(),
    })
}

/// Input-dependent forward-backward with per-step scaling.
pub fn forward_backward(seq: &Sequence, model: &IohmmModel) -> Result<Posteriors, IohmmError> {
    let dens = model.densities()?;
    forward_backward_with(seq, model, &dens, 0)
}

/// Filtered beliefs `P(S_t | O_0..=t, A_0..=t)` for every prefix of `seq`.
pub fn filter(seq: &Sequence, model: &IohmmModel) -> Result<Vec<Vec<f64>>, IohmmError> {
    check_actions(seq, model, 0)?;
    let dens = model.densities()?;
    let loge = log_emissions(seq, model, &dens);
    Ok(forward_pass(seq, model, &loge, 0)?.alpha)
}

pub(crate) fn loglik_with(
    data: &TrainingDataset,
    model: &IohmmModel,
    dens: &[Vec<Gaussian>],
) -> Result<f64, IohmmError> {
    data.sequences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            check_actions(s, model, i)?;
            let loge = log_emissions(s, model, dens);
            Ok(forward_pass(s, model, &loge, i)?
                .log_scale
                .iter()
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>, IohmmError>>()
        .map(|v| v.iter().sum())
}

/// Sum of per-sequence forward log-likelihoods.
pub fn loglik(data: &TrainingDataset, model: &IohmmModel) -> Result<f64, IohmmError> {
    let dens = model.densities()?;
    loglik_with(data, model, &dens)
}

/// Marginal-MAP labels; ties go to the lower (healthier) state.
pub fn decode_states(seq: &Sequence, model: &IohmmModel) -> Result<Decoded, IohmmError> {
    let post = forward_backward(seq, model)?;
    let labels = post.gamma.iter().map(|row| argmax_low(row)).collect();
    Ok(Decoded {
        labels,
        posteriors: post.gamma,
    })
}

pub(crate) fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
