//! Input-output hidden Markov model with left-to-right degradation structure.
//!
//! Hidden states are indexed `0..K` from healthiest to most degraded. The
//! transition matrix of action `a` is stored row-major with rows indexing the
//! source state: `transitions[a][from][to]`. The transition into time `t`
//! uses the action recorded at time `t`.
//!
//! Emissions are Gaussian, either shared across actions or one set per
//! action. Emission parameters are stored per *group*: a shared model has one
//! group, an action-dependent model has one group per action.

mod inference;
mod rul;
mod select;
mod synth;
mod train;

pub use inference::{decode_states, filter, forward_backward, loglik, Decoded, Posteriors};
pub use rul::{predict_rul, predict_rul_chain, ActionSchedule, RulForecast, DEFAULT_RUL_QUANTILES};
pub use select::{aic, best_by_bic, bic, free_parameters, select_k, SelectionRow};
pub(crate) use synth::sample_index;
pub use synth::{sample_run_to_failure, sample_sequence, SampledSequence};
pub use train::{
    enforce_left_to_right, gem_fit, init_kmeans, project_left_to_right, sort_states, GemConfig,
    GemFit,
};

use crate::gaussian::{Gaussian, GaussianError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IohmmError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("sequence {sequence} has unknown action id {action} at t={t}")]
    InvalidAction {
        sequence: usize,
        t: usize,
        action: usize,
    },
    #[error("sequence {0} is empty")]
    EmptySequence(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("emission {group}/{state}: {source}")]
    Emission {
        group: usize,
        state: usize,
        #[source]
        source: GaussianError,
    },
    #[error("log-likelihood became non-finite at iteration {iteration}")]
    NoProgress { iteration: usize },
    #[error("sequence {0} has zero likelihood under the model")]
    ZeroLikelihood(usize),
    #[error("model has no absorbing failure state")]
    NoFailureState,
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    #[default]
    Shared,
    ActionDependent,
}

/// One unit's recorded history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// The unit ran to failure; its last epoch is pinned to the last hidden state.
    #[serde(default)]
    pub failed: bool,
}

impl Sequence {
    pub fn new(observations: Vec<Vec<f64>>, actions: Vec<usize>) -> Self {
        Self {
            observations,
            actions,
            failed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub sequences: Vec<Sequence>,
}

impl TrainingDataset {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        Self { sequences }
    }

    pub fn total_observations(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn dim(&self) -> Option<usize> {
        self.sequences
            .iter()
            .find_map(|s| s.observations.first().map(Vec::len))
    }

    /// Checks lengths, dimensions and action ids against `n_actions`.
    pub fn validate(&self, n_actions: usize) -> Result<usize, IohmmError> {
        let dim = self
            .dim()
            .ok_or(IohmmError::TooFewObservations { needed: 1, got: 0 })?;
        for (i, s) in self.sequences.iter().enumerate() {
            if s.is_empty() {
                return Err(IohmmError::EmptySequence(i));
            }
            if s.actions.len() != s.observations.len() {
                return Err(IohmmError::Dimension(format!(
                    "sequence {i}: {} observations but {} actions",
                    s.observations.len(),
                    s.actions.len()
                )));
            }
            if let Some(t) = s.observations.iter().position(|o| o.len() != dim) {
                return Err(IohmmError::Dimension(format!(
                    "sequence {i}, t={t}: expected {dim} features"
                )));
            }
            if let Some(t) = s.actions.iter().position(|&a| a >= n_actions) {
                return Err(IohmmError::InvalidAction {
                    sequence: i,
                    t,
                    action: s.actions[t],
                });
            }
        }
        Ok(dim)
    }
}

/// A fitted (or hand-specified) IOHMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IohmmModel {
    #[serde(rename = "K")]
    pub n_states: usize,
    pub actions: Vec<String>,
    pub emission_mode: EmissionMode,
    /// `[action][from][to]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `[group][state][feature]`
    pub means: Vec<Vec<Vec<f64>>>,
    /// `[group][state]` row-major D x D covariance
    pub covariances: Vec<Vec<Vec<Vec<f64>>>>,
    pub initial: Vec<f64>,
    pub sort_key: usize,
}

impl IohmmModel {
    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn dim(&self) -> usize {
        self.means
            .first()
            .and_then(|g| g.first())
            .map_or(0, Vec::len)
    }

    pub fn n_groups(&self) -> usize {
        match self.emission_mode {
            EmissionMode::Shared => 1,
            EmissionMode::ActionDependent => self.n_actions(),
        }
    }

    /// Emission group used at a step taken under `action`.
    pub fn group_of(&self, action: usize) -> usize {
        match self.emission_mode {
            EmissionMode::Shared => 0,
            EmissionMode::ActionDependent => action,
        }
    }

    pub fn validate(&self) -> Result<(), IohmmError> {
        let k = self.n_states;
        let bad = |m: String| Err(IohmmError::InvalidModel(m));
        if k == 0 {
            return bad("K must be positive".into());
        }
        if self.actions.is_empty() {
            return bad("action set is empty".into());
        }
        for (i, a) in self.actions.iter().enumerate() {
            if self.actions[..i].contains(a) {
                return bad(format!("duplicate action label {a:?}"));
            }
        }
        if self.transitions.len() != self.n_actions() {
            return bad("one transition matrix per action is required".into());
        }
        for (a, m) in self.transitions.iter().enumerate() {
            if m.len() != k || m.iter().any(|r| r.len() != k) {
                return bad(format!("transition matrix {a} is not {k}x{k}"));
            }
            for (l, row) in m.iter().enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad(format!("transition {a} row {l} has entries outside [0,1]"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return bad(format!("transition {a} row {l} sums to {s}"));
                }
            }
        }
        if self.initial.len() != k || (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("initial distribution must have K entries summing to 1".into());
        }
        let groups = self.n_groups();
        if self.means.len() != groups || self.covariances.len() != groups {
            return bad(format!("expected {groups} emission groups"));
        }
        let d = self.dim();
        if d == 0 {
            return bad("emission dimension is zero".into());
        }
        if self.sort_key >= d {
            return bad(format!(
                "sort key {} out of range for dimension {d}",
                self.sort_key
            ));
        }
        for g in 0..groups {
            if self.means[g].len() != k || self.covariances[g].len() != k {
                return bad(format!("emission group {g} must have K states"));
            }
            if self.means[g].iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("emission group {g} has non-finite means"));
            }
            if self.means[g].iter().any(|m| m.len() != d) {
                return bad(format!("emission group {g} mean dimension mismatch"));
            }
        }
        Ok(())
    }

    /// Gaussian densities indexed `[group][state]`.
    pub fn densities(&self) -> Result<Vec<Vec<Gaussian>>, IohmmError> {
        self.means
            .iter()
            .zip(&self.covariances)
            .enumerate()
            .map(|(g, (ms, cs))| {
                ms.iter()
                    .zip(cs)
                    .enumerate()
                    .map(|(s, (m, c))| {
                        Gaussian::new(m, c).map_err(|source| IohmmError::Emission {
                            group: g,
                            state: s,
                            source,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Total probability on strictly backward transitions, summed over actions and rows.
    pub fn backward_mass(&self) -> f64 {
        self.transitions
            .iter()
            .flat_map(|m| m.iter().enumerate().flat_map(|(l, row)| row[..l].iter()))
            .sum()
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_good_model() {
        testutil::three_state().validate().unwrap();
    }

    #[test]
    fn rejects_bad_rows_and_duplicates() {
        let mut m = testutil::three_state();
        m.transitions[0][0] = vec![0.5, 0.2, 0.0];
        assert!(m.validate().is_err());
        let mut m = testutil::three_state();
        m.actions[1] = "slow".into();
        assert!(m.validate().is_err());
    }

    #[test]
    fn dataset_validation() {
        let ds = TrainingDataset::new(vec![Sequence::new(vec![vec![1.0], vec![2.0]], vec![0, 3])]);
        assert!(matches!(
            ds.validate(2),
            Err(IohmmError::InvalidAction { action: 3, .. })
        ));
        let ds = TrainingDataset::new(vec![Sequence::new(vec![vec![1.0]], vec![0, 0])]);
        assert!(matches!(ds.validate(1), Err(IohmmError::Dimension(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = testutil::three_state();
        m.transitions[0][0] = vec![0.1 + 0.2, 1.0 - (0.1 + 0.2), 0.0];
        m.means[0][1][0] = std::f64::consts::PI;
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"K\":3"));
        let back: IohmmModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
