//! Online decisions: signal window to features to symbol beliefs to state belief to action.

use crate::features::{extract_features, FeatureError, FeatureVector, SignalWindow};
use crate::gmm::{GmmError, GmmModel, Mixture};
use crate::pomdp::{policy_value, Belief, Policy, PomdpError, PomdpModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How symbol responsibilities become a state belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefMapping {
    /// `b(s) = normalize(sum_o B[s][o] b'(o))`.
    #[default]
    Verbatim,
    /// `b(s) ∝ prior(s) sum_o B[s][o] b'(o)`, with a uniform prior when none is carried.
    Bayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    #[default]
    Stateless,
    Recursive,
}

/// Everything needed to act on a new window. Immutable once built.
#[derive(Debug, Clone)]
pub struct DecisionContext {
    gmm: GmmModel,
    mixture: Mixture,
    /// State-by-symbol matrix `B`.
    emission: Vec<Vec<f64>>,
    policy: Policy,
    model: PomdpModel,
    mapping: BeliefMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub action: usize,
    pub action_label: String,
    pub value: f64,
    pub belief: Belief,
    pub symbol: usize,
    pub responsibilities: Vec<f64>,
    /// Set when a recursive update was impossible and the stateless mapping was used.
    pub fallback: bool,
}

impl DecisionContext {
    /// Uses the POMDP's observation matrix of its first action as `B`.
    pub fn new(
        gmm: GmmModel,
        model: PomdpModel,
        policy: Policy,
        mapping: BeliefMapping,
    ) -> Result<Self, RuntimeError> {
        let emission = model
            .observations
            .first()
            .cloned()
            .ok_or_else(|| RuntimeError::Dimension("POMDP has no actions".into()))?;
        Self::with_emission(gmm, model, policy, emission, mapping)
    }

    pub fn with_emission(
        gmm: GmmModel,
        model: PomdpModel,
        policy: Policy,
        emission: Vec<Vec<f64>>,
        mapping: BeliefMapping,
    ) -> Result<Self, RuntimeError> {
        model.validate()?;
        let mixture = gmm.prepare()?;
        let n = model.n_states();
        if emission.len() != n || emission.iter().any(|r| r.len() != gmm.k) {
            return Err(RuntimeError::Dimension(format!(
                "B must be {n} states by {} symbols",
                gmm.k
            )));
        }
        if model.n_observations() != gmm.k {
            return Err(RuntimeError::Dimension(format!(
                "POMDP has {} symbols, GMM has {}",
                model.n_observations(),
                gmm.k
            )));
        }
        if policy.alphas.is_empty() {
            return Err(RuntimeError::Dimension(
                "policy has no alpha vectors".into(),
            ));
        }
        for a in &policy.alphas {
            if a.values.len() != n || a.action >= model.n_actions() {
                return Err(RuntimeError::Dimension(
                    "policy does not match the POMDP".into(),
                ));
            }
        }
        Ok(Self {
            gmm,
            mixture,
            emission,
            policy,
            model,
            mapping,
        })
    }

    pub fn model(&self) -> &PomdpModel {
        &self.model
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    /// Maps symbol responsibilities to a state belief.
    pub fn map_belief(&self, resp: &[f64], prior: Option<&[f64]>) -> Result<Belief, RuntimeError> {
        let mut b: Vec<f64> = self
            .emission
            .iter()
            .map(|row| row.iter().zip(resp).map(|(x, y)| x * y).sum())
            .collect();
        if let (BeliefMapping::Bayes, Some(p)) = (self.mapping, prior) {
            b.iter_mut().zip(p).for_each(|(x, q)| *x *= q);
        }
        let s: f64 = b.iter().sum();
        if !(s > 0.0) {
            return Err(RuntimeError::Dimension(
                "observation has zero weight under every state".into(),
            ));
        }
        b.iter_mut().for_each(|x| *x /= s);
        Ok(b)
    }

    fn act(
        &self,
        belief: Belief,
        symbol: usize,
        responsibilities: Vec<f64>,
        fallback: bool,
    ) -> Decision {
        let (value, action) = policy_value(&self.policy, &belief);
        Decision {
            action,
            action_label: self.model.actions[action].clone(),
            value,
            belief,
            symbol,
            responsibilities,
            fallback,
        }
    }

    /// Stateless decision from a feature vector in the GMM's feature space.
    pub fn decide_observation(
        &self,
        o: &[f64],
        prior: Option<&[f64]>,
    ) -> Result<Decision, RuntimeError> {
        let resp = self.mixture.responsibilities(o)?;
        let symbol = argmax_low(&resp);
        let belief = self.map_belief(&resp, prior)?;
        Ok(self.act(belief, symbol, resp, false))
    }

    /// Recursive decision: the previous belief is pushed through the filter
    /// with the discretised symbol. An impossible symbol falls back to the
    /// stateless mapping.
    pub fn decide_observation_recursive(
        &self,
        o: &[f64],
        prev_belief: &[f64],
        prev_action: usize,
    ) -> Result<Decision, RuntimeError> {
        let resp = self.mixture.responsibilities(o)?;
        let symbol = argmax_low(&resp);
        match self.model.belief_update(prev_belief, prev_action, symbol) {
            Ok(b) => Ok(self.act(b, symbol, resp, false)),
            Err(PomdpError::ZeroProbabilityObservation { .. }) => {
                log::warn!("symbol {symbol} impossible after action {prev_action}; using stateless mapping");
                let prior = self.model.predict(prev_belief, prev_action);
                let b = self.map_belief(&resp, Some(&prior))?;
                Ok(self.act(b, symbol, resp, true))
            }
            Err(e) => Err(e.into()),
        }
    }
}

fn argmax_low(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn features_of(samples: &[f64]) -> Result<FeatureVector, RuntimeError> {
    Ok(extract_features(SignalWindow::new(samples)?)?)
}

/// Action for one raw window under the context's belief mapping (uniform prior).
pub fn decide_stateless(samples: &[f64], ctx: &DecisionContext) -> Result<Decision, RuntimeError> {
    let f = features_of(samples)?;
    ctx.decide_observation(&f.to_array(), None)
}

/// Action for one raw window given the previous belief and action.
pub fn decide_recursive(
    samples: &[f64],
    prev_belief: &[f64],
    prev_action: usize,
    ctx: &DecisionContext,
) -> Result<Decision, RuntimeError> {
    let f = features_of(samples)?;
    ctx.decide_observation_recursive(&f.to_array(), prev_belief, prev_action)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRow {
    pub epoch: usize,
    pub action: Option<usize>,
    pub action_label: Option<String>,
    pub value: Option<f64>,
    pub belief: Option<Belief>,
    pub symbol: Option<usize>,
    pub fallback: bool,
    pub error: Option<String>,
}

/// Runs a decision per epoch. In recursive mode the first epoch uses the
/// stateless mapping and later epochs filter from the carried belief; PM and
/// repair resets act through the POMDP's transition rows. With the Bayes
/// mapping in stateless mode the prior is the carried belief propagated by
/// the last action. Failed epochs are logged and leave the carried state unchanged.
pub fn run_session(
    epochs: &[Vec<f64>],
    ctx: &DecisionContext,
    mode: SessionMode,
) -> Vec<SessionRow> {
    let mut carried: Option<(Belief, usize)> = None;
    epochs
        .iter()
        .enumerate()
        .map(|(epoch, samples)| {
            let result = features_of(samples).and_then(|f| {
                let o = f.to_array();
                match (&carried, mode) {
                    (Some((b, a)), SessionMode::Recursive) => {
                        ctx.decide_observation_recursive(&o, b, *a)
                    }
                    (Some((b, a)), SessionMode::Stateless)
                        if ctx.mapping == BeliefMapping::Bayes =>
                    {
                        let prior = ctx.model.predict(b, *a);
                        ctx.decide_observation(&o, Some(&prior))
                    }
                    _ => ctx.decide_observation(&o, None),
                }
            });
            match result {
                Ok(d) => {
                    carried = Some((d.belief.clone(), d.action));
                    SessionRow {
                        epoch,
                        action: Some(d.action),
                        action_label: Some(d.action_label),
                        value: Some(d.value),
                        belief: Some(d.belief),
                        symbol: Some(d.symbol),
                        fallback: d.fallback,
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("epoch {epoch}: {e}");
                    SessionRow {
                        epoch,
                        action: None,
                        action_label: None,
                        value: None,
                        belief: None,
                        symbol: None,
                        fallback: false,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}
