//! Discrete POMDP over capacity and preventive-maintenance actions.
//!
//! States are the operating states followed by the failure state `F`.
//! Entering `F` is repaired at the next epoch (the chain returns to state 0
//! under every action) and the PM action resets every state to state 0.
//!
//! Arrays are indexed action-first: `X[a][s][s']`, `Z[a][s'][o]`, `r[a][s]`.

mod build;
mod pbvi;

pub use build::{
    build_pomdp, build_pomdp_from_matrices, CostRates, CostTable, FailureSpec, ObservationSource,
    PM_LABEL,
};
pub use pbvi::{
    backup, expand, pbvi_solve, policy_value, prune, AlphaVector, PbviConfig, Policy, SolveStats,
};

use crate::gmm::GmmError;
use crate::iohmm::IohmmError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability vector over the POMDP states.
pub type Belief = Vec<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomdpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("discount {0} outside [0, 1)")]
    InvalidGamma(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("observation {observation} has zero probability after action {action}")]
    ZeroProbabilityObservation { action: usize, observation: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Iohmm(#[from] IohmmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpModel {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    #[serde(rename = "X")]
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Z")]
    pub observations: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    /// Index of the preventive-maintenance action, when the model has one.
    #[serde(default)]
    pub pm_action: Option<usize>,
    /// Index of the failure state, when the model has one.
    #[serde(default)]
    pub failure_state: Option<usize>,
}

fn is_distribution(row: &[f64]) -> bool {
    row.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p))
        && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

impl PomdpModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations
            .first()
            .and_then(|m| m.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        let bad = |m: String| Err(PomdpError::InvalidModel(m));
        let (n, na, no) = (self.n_states(), self.n_actions(), self.n_observations());
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(PomdpError::InvalidGamma(self.gamma));
        }
        if n == 0 || na == 0 || no == 0 {
            return bad("states, actions and observations must be non-empty".into());
        }
        if self.transitions.len() != na || self.observations.len() != na || self.r.len() != na {
            return bad(format!("X, Z and r need one entry per action ({na})"));
        }
        for a in 0..na {
            if self.transitions[a].len() != n || self.transitions[a].iter().any(|r| r.len() != n) {
                return bad(format!("X for action {a} is not {n}x{n}"));
            }
            if self.observations[a].len() != n || self.observations[a].iter().any(|r| r.len() != no)
            {
                return bad(format!("Z for action {a} is not {n}x{no}"));
            }
            if self.r[a].len() != n || self.r[a].iter().any(|v| !v.is_finite()) {
                return bad(format!("r for action {a} must have {n} finite entries"));
            }
            if let Some(s) = self.transitions[a].iter().position(|r| !is_distribution(r)) {
                return bad(format!("X row {s} of action {a} is not a distribution"));
            }
            if let Some(s) = self.observations[a]
                .iter()
                .position(|r| !is_distribution(r))
            {
                return bad(format!("Z row {s} of action {a} is not a distribution"));
            }
        }
        if self.pm_action.is_some_and(|a| a >= na) || self.failure_state.is_some_and(|s| s >= n) {
            return bad("PM action or failure state index out of range".into());
        }
        Ok(())
    }

    pub fn check_belief(&self, b: &[f64]) -> Result<(), PomdpError> {
        if b.len() != self.n_states() {
            return Err(PomdpError::InvalidBelief(format!(
                "{} entries for {} states",
                b.len(),
                self.n_states()
            )));
        }
        if b.iter().any(|&p| !(p >= -1e-12)) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PomdpError::InvalidBelief("not a probability vector".into()));
        }
        Ok(())
    }

    fn check_action(&self, a: usize) -> Result<(), PomdpError> {
        if a >= self.n_actions() {
            return Err(PomdpError::InvalidArgument(format!("unknown action {a}")));
        }
        Ok(())
    }

    /// `R(b, a) = sum_s b(s) r(s, a)`.
    pub fn expected_reward(&self, b: &[f64], a: usize) -> Result<f64, PomdpError> {
        self.check_belief(b)?;
        self.check_action(a)?;
        Ok(dot(b, &self.r[a]))
    }

    /// State distribution after taking `a`, before observing.
    pub fn predict(&self, b: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        for (row, &p) in self.transitions[a].iter().zip(b) {
            if p == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(row) {
                *o += p * x;
            }
        }
        out
    }

    /// `Pr(o | b, a)` for every symbol.
    pub fn observation_probs(&self, b: &[f64], a: usize) -> Vec<f64> {
        let pred = self.predict(b, a);
        let mut out = vec![0.0; self.n_observations()];
        for (row, &p) in self.observations[a].iter().zip(&pred) {
            for (o, &z) in out.iter_mut().zip(row) {
                *o += p * z;
            }
        }
        out
    }

    pub fn observation_prob(&self, b: &[f64], a: usize, o: usize) -> Result<f64, PomdpError> {
        self.check_belief(b)?;
        self.check_action(a)?;
        if o >= self.n_observations() {
            return Err(PomdpError::InvalidArgument(format!(
                "unknown observation {o}"
            )));
        }
        Ok(self.observation_probs(b, a)[o])
    }

    /// Bayes filter step `b'(s') = Z(s',a,o) sum_s X(s,a,s') b(s) / Pr(o | a, b)`.
    pub fn belief_update(&self, b: &[f64], a: usize, o: usize) -> Result<Belief, PomdpError> {
        self.check_belief(b)?;
        self.check_action(a)?;
        if o >= self.n_observations() {
            return Err(PomdpError::InvalidArgument(format!(
                "unknown observation {o}"
            )));
        }
        self.update_unchecked(b, a, o)
    }

    pub(crate) fn update_unchecked(
        &self,
        b: &[f64],
        a: usize,
        o: usize,
    ) -> Result<Belief, PomdpError> {
        let pred = self.predict(b, a);
        let mut out: Vec<f64> = pred
            .iter()
            .zip(&self.observations[a])
            .map(|(p, z)| p * z[o])
            .collect();
        let s: f64 = out.iter().sum();
        if s <= 1e-300 {
            return Err(PomdpError::ZeroProbabilityObservation {
                action: a,
                observation: o,
            });
        }
        out.iter_mut().for_each(|x| *x /= s);
        Ok(out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
