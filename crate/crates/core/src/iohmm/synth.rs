//! Sampling hidden trajectories and observations from a model.

use super::{IohmmError, IohmmModel, Sequence};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SampledSequence {
    pub states: Vec<usize>,
    pub sequence: Sequence,
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Samples one sequence driven by the given actions.
pub fn sample_sequence<R: Rng + ?Sized>(
    model: &IohmmModel,
    actions: &[usize],
    rng: &mut R,
) -> Result<SampledSequence, IohmmError> {
    let dens = model.densities()?;
    if let Some(&a) = actions.iter().find(|&&a| a >= model.n_actions()) {
        return Err(IohmmError::InvalidAction {
            sequence: 0,
            t: 0,
            action: a,
        });
    }
    let mut states = Vec::with_capacity(actions.len());
    let mut obs = Vec::with_capacity(actions.len());
    let mut s = 0;
    for (t, &a) in actions.iter().enumerate() {
        s = if t == 0 {
            sample_index(&model.initial, rng)
        } else {
            sample_index(&model.transitions[a][s], rng)
        };
        states.push(s);
        obs.push(dens[model.group_of(a)][s].sample(rng));
    }
    Ok(SampledSequence {
        states,
        sequence: Sequence::new(obs, actions.to_vec()),
    })
}

/// Samples under a fixed action until the last hidden state is first
/// entered (inclusive) or `max_len` epochs elapse. The returned sequence is
/// flagged `failed` when it reached the last state.
pub fn sample_run_to_failure<R: Rng + ?Sized>(
    model: &IohmmModel,
    action: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<SampledSequence, IohmmError> {
    if action >= model.n_actions() {
        return Err(IohmmError::InvalidAction {
            sequence: 0,
            t: 0,
            action,
        });
    }
    let dens = model.densities()?;
    let last = model.n_states - 1;
    let mut states = Vec::new();
    let mut obs = Vec::new();
    let mut s = sample_index(&model.initial, rng);
    while states.len() < max_len {
        if !states.is_empty() {
            s = sample_index(&model.transitions[action][s], rng);
        }
        states.push(s);
        obs.push(dens[model.group_of(action)][s].sample(rng));
        if s == last {
            break;
        }
    }
    let failed = states.last() == Some(&last);
    let n = states.len();
    let mut sequence = Sequence::new(obs, vec![action; n]);
    sequence.failed = failed;
    Ok(SampledSequence { states, sequence })
}
