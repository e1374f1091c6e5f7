//! Remaining-useful-life forecasts as hitting-time quantiles of the failure state.

use super::{IohmmError, IohmmModel};
use serde::Serialize;

pub const DEFAULT_RUL_QUANTILES: [f64; 3] = [0.025, 0.5, 0.975];

/// Actions assumed for future epochs.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSchedule {
    Fixed(usize),
    /// Step `t` uses `actions[t]`; the last entry repeats past the end.
    Sequence(Vec<usize>),
}

impl ActionSchedule {
    fn at(&self, t: usize) -> usize {
        match self {
            ActionSchedule::Fixed(a) => *a,
            ActionSchedule::Sequence(v) => v[t.min(v.len() - 1)],
        }
    }

    fn actions(&self) -> Vec<usize> {
        match self {
            ActionSchedule::Fixed(a) => vec![*a],
            ActionSchedule::Sequence(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RulForecast {
    pub lower: usize,
    pub median: usize,
    pub upper: usize,
    /// At least one quantile was not reached within the horizon and reports the horizon.
    pub censored: bool,
}

/// Hitting-time quantiles of `failure` for a chain given per-action
/// row-stochastic matrices. `failure` must be absorbing under every scheduled action.
pub fn predict_rul_chain(
    belief: &[f64],
    transitions: &[Vec<Vec<f64>>],
    failure: usize,
    schedule: &ActionSchedule,
    horizon: usize,
    quantiles: [f64; 3],
) -> Result<RulForecast, IohmmError> {
    let n = belief.len();
    if horizon == 0 {
        return Err(IohmmError::InvalidArgument(
            "horizon must be at least 1".into(),
        ));
    }
    if (belief.iter().sum::<f64>() - 1.0).abs() > 1e-9 || belief.iter().any(|&b| b < 0.0) {
        return Err(IohmmError::InvalidArgument(
            "belief is not a probability vector".into(),
        ));
    }
    if failure >= n {
        return Err(IohmmError::NoFailureState);
    }
    if matches!(schedule, ActionSchedule::Sequence(v) if v.is_empty()) {
        return Err(IohmmError::InvalidArgument("empty action schedule".into()));
    }
    for a in schedule.actions() {
        let m = transitions
            .get(a)
            .ok_or_else(|| IohmmError::InvalidArgument(format!("unknown action {a}")))?;
        if m.len() != n || m.iter().any(|r| r.len() != n) {
            return Err(IohmmError::Dimension(format!(
                "transition matrix {a} does not match belief length {n}"
            )));
        }
        if (m[failure][failure] - 1.0).abs() > 1e-12 {
            return Err(IohmmError::NoFailureState);
        }
    }

    let mut dist = belief.to_vec();
    let mut cdf = vec![dist[failure]];
    let target = quantiles.iter().copied().fold(0.0, f64::max);
    let eps = 1e-12;
    let mut t = 0;
    while t < horizon && cdf[t] + eps < target {
        let m = &transitions[schedule.at(t)];
        let mut next = vec![0.0; n];
        for (i, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (nx, &mij) in next.iter_mut().zip(&m[i]) {
                *nx += p * mij;
            }
        }
        dist = next;
        t += 1;
        cdf.push(dist[failure]);
    }

    let mut censored = false;
    let mut q = |p: f64| match cdf.iter().position(|&c| c + eps >= p) {
        Some(i) => i,
        None => {
            censored = true;
            horizon
        }
    };
    let lower = q(quantiles[0]);
    let median = q(quantiles[1]);
    let upper = q(quantiles[2]);
    Ok(RulForecast {
        lower,
        median,
        upper,
        censored,
    })
}

/// RUL from a belief over the model's hidden states, treating the last state as failure.
pub fn predict_rul(
    belief: &[f64],
    model: &IohmmModel,
    schedule: &ActionSchedule,
    horizon: usize,
    quantiles: [f64; 3],
) -> Result<RulForecast, IohmmError> {
    if belief.len() != model.n_states {
        return Err(IohmmError::Dimension(format!(
            "belief has {} entries, model has {} states",
            belief.len(),
            model.n_states
        )));
    }
    predict_rul_chain(
        belief,
        &model.transitions,
        model.n_states - 1,
        schedule,
        horizon,
        quantiles,
    )
}
