use super::{PomdpError, PomdpModel};
use crate::gmm::GmmModel;
use crate::iohmm::IohmmModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Label of the preventive-maintenance row in a cost table.
pub const PM_LABEL: &str = "PM";

/// Per-action, per-state rewards. Positive entries are operating revenue,
/// negative entries are maintenance or failure costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub actions: Vec<String>,
    pub states: Vec<String>,
    /// `[action][state]`
    pub values: Vec<Vec<f64>>,
}

impl CostTable {
    pub fn row(&self, label: &str) -> Option<&[f64]> {
        self.actions
            .iter()
            .position(|a| a == label)
            .map(|i| self.values[i].as_slice())
    }

    /// Labels of the non-PM rows, in table order.
    pub fn capacity_actions(&self) -> Vec<String> {
        self.actions
            .iter()
            .filter(|a| *a != PM_LABEL)
            .cloned()
            .collect()
    }

    fn validate(&self, n_states: usize) -> Result<(), PomdpError> {
        if self.states.len() != n_states
            || self.values.len() != self.actions.len()
            || self.values.iter().any(|r| r.len() != n_states)
        {
            return Err(PomdpError::Dimension(format!(
                "cost table must have {n_states} state columns and one row per action"
            )));
        }
        if self.row(PM_LABEL).is_none() {
            return Err(PomdpError::InvalidArgument(format!(
                "cost table has no {PM_LABEL} row"
            )));
        }
        Ok(())
    }
}

/// Cost table with state-independent operating rewards, usable for any state count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    /// Capacity action labels.
    pub actions: Vec<String>,
    /// Reward per epoch in an operating state, per capacity action.
    pub operate: Vec<f64>,
    pub pm: f64,
    /// Reward of an epoch spent in the failure state, under any action.
    pub failure: f64,
}

impl CostRates {
    /// Reads rates off a table whose rows are constant over operating states
    /// and whose failure column is shared by all actions.
    pub fn from_table(t: &CostTable) -> Result<Self, PomdpError> {
        let n = t.states.len();
        if n < 2 {
            return Err(PomdpError::Dimension(
                "cost table needs operating and failure columns".into(),
            ));
        }
        let failure = t.values[0][n - 1];
        let mut actions = Vec::new();
        let mut operate = Vec::new();
        let mut pm = None;
        for (label, row) in t.actions.iter().zip(&t.values) {
            if row[..n - 1].iter().any(|&v| v != row[0]) || row[n - 1] != failure {
                return Err(PomdpError::InvalidArgument(format!(
                    "cost row {label:?} is not constant over operating states with a shared failure cost"
                )));
            }
            if label == PM_LABEL {
                pm = Some(row[0]);
            } else {
                actions.push(label.clone());
                operate.push(row[0]);
            }
        }
        let pm = pm.ok_or_else(|| {
            PomdpError::InvalidArgument(format!("cost table has no {PM_LABEL} row"))
        })?;
        Ok(Self {
            actions,
            operate,
            pm,
            failure,
        })
    }

    /// Table for `n_states` states, the last being failure.
    pub fn table(&self, n_states: usize) -> CostTable {
        let row = |v: f64| {
            let mut r = vec![v; n_states];
            r[n_states - 1] = self.failure;
            r
        };
        let mut actions = self.actions.clone();
        actions.push(PM_LABEL.into());
        let mut values: Vec<Vec<f64>> = self.operate.iter().map(|&v| row(v)).collect();
        values.push(row(self.pm));
        CostTable {
            actions,
            states: state_labels(n_states),
            values,
        }
    }
}

/// How the observation matrix is obtained.
#[derive(Debug, Clone)]
pub enum ObservationSource {
    /// State-by-symbol emission matrix. With one row fewer than the POMDP has
    /// states, the failure row copies the last operating row.
    Matrix(Vec<Vec<f64>>),
    /// Expected GMM responsibilities under each state's Gaussian emission,
    /// estimated from `samples` fixed-seed draws per state.
    Gmm {
        model: GmmModel,
        samples: usize,
        seed: u64,
    },
}

/// Where failure enters the IOHMM dynamics.
#[derive(Debug, Clone, PartialEq)]
pub enum FailureSpec {
    /// The IOHMM's last hidden state is the failure state.
    LastHiddenState,
    /// `[action][state]` probability of failing from each hidden state; the
    /// failure state is appended after the hidden states.
    Hazard(Vec<Vec<f64>>),
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn state_labels(n: usize) -> Vec<String> {
    (1..n)
        .map(|i| i.to_string())
        .chain(std::iter::once("F".to_string()))
        .collect()
}

fn normalized_rows(m: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>, PomdpError> {
    m.iter()
        .enumerate()
        .map(|(i, row)| {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || s <= 0.0 {
                return Err(PomdpError::InvalidModel(format!(
                    "{what} row {i} is not a valid weight row"
                )));
            }
            Ok(row.iter().map(|x| x / s).collect())
        })
        .collect()
}

/// Joins capacity dynamics (with failure as the last state) to PM and repair
/// semantics and a reward table.
fn assemble(
    capacity: Vec<Vec<Vec<f64>>>,
    capacity_labels: Vec<String>,
    z: Vec<Vec<Vec<f64>>>,
    costs: &CostTable,
    gamma: f64,
) -> Result<PomdpModel, PomdpError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(PomdpError::InvalidGamma(gamma));
    }
    let n = capacity[0].len();
    let fail = n - 1;
    costs.validate(n)?;

    let mut transitions = Vec::with_capacity(capacity.len() + 1);
    for (a, mut m) in capacity.into_iter().enumerate() {
        if m.len() != n || m.iter().any(|r| r.len() != n) {
            return Err(PomdpError::Dimension(format!(
                "transition matrix {a} is not {n}x{n}"
            )));
        }
        m[fail] = unit(n, 0);
        transitions.push(normalized_rows(&m, "transition")?);
    }
    transitions.push(vec![unit(n, 0); n]);

    let mut actions = capacity_labels;
    actions.push(PM_LABEL.to_string());
    let r = actions
        .iter()
        .map(|a| {
            costs.row(a).map(<[f64]>::to_vec).ok_or_else(|| {
                PomdpError::InvalidArgument(format!("cost table has no row for action {a:?}"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let model = PomdpModel {
        states: state_labels(n),
        pm_action: Some(actions.len() - 1),
        actions,
        transitions,
        observations: z,
        r,
        gamma,
        failure_state: Some(fail),
    };
    model.validate()?;
    Ok(model)
}

fn observation_rows(b: &[Vec<f64>], n: usize) -> Result<Vec<Vec<f64>>, PomdpError> {
    let mut rows = normalized_rows(b, "emission")?;
    if rows.len() + 1 == n {
        rows.push(rows.last().expect("at least one operating row").clone());
    }
    if rows.len() != n {
        return Err(PomdpError::Dimension(format!(
            "emission matrix has {} rows, expected {} or {}",
            b.len(),
            n - 1,
            n
        )));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(PomdpError::Dimension(
            "emission rows differ in length".into(),
        ));
    }
    Ok(rows)
}

/// POMDP from printed matrices: per-capacity transition matrices that already
/// include the failure state as their last row/column, and an emission matrix
/// shared by every action.
pub fn build_pomdp_from_matrices(
    capacity: &[Vec<Vec<f64>>],
    emission: &[Vec<f64>],
    costs: &CostTable,
    gamma: f64,
) -> Result<PomdpModel, PomdpError> {
    let labels = costs.capacity_actions();
    if capacity.is_empty() || labels.len() != capacity.len() {
        return Err(PomdpError::Dimension(format!(
            "{} transition matrices but {} capacity rows in the cost table",
            capacity.len(),
            labels.len()
        )));
    }
    let n = capacity[0].len();
    if n < 2 {
        return Err(PomdpError::Dimension(
            "need at least one operating state plus failure".into(),
        ));
    }
    let z = observation_rows(emission, n)?;
    assemble(
        capacity.to_vec(),
        labels,
        vec![z; capacity.len() + 1],
        costs,
        gamma,
    )
}

/// Expected responsibilities of every symbol under each state's emission.
fn gmm_rows(
    iohmm: &IohmmModel,
    gmm: &GmmModel,
    group: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, PomdpError> {
    let mix = gmm.prepare()?;
    let dens = iohmm.densities()?;
    dens[group]
        .iter()
        .enumerate()
        .map(|(s, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((group as u64) << 32 | s as u64));
            let mut acc = vec![0.0; mix.k()];
            for _ in 0..samples {
                let x = g.sample(&mut rng);
                for (a, r) in acc.iter_mut().zip(mix.responsibilities(&x)?) {
                    *a += r;
                }
            }
            let total: f64 = acc.iter().sum();
            Ok(acc.iter().map(|a| a / total).collect())
        })
        .collect()
}

/// POMDP from a fitted IOHMM, an observation source and a cost table.
///
/// Capacity actions take the IOHMM's action labels; each must have a cost row.
pub fn build_pomdp(
    iohmm: &IohmmModel,
    observation: &ObservationSource,
    costs: &CostTable,
    gamma: f64,
    failure: &FailureSpec,
) -> Result<PomdpModel, PomdpError> {
    iohmm.validate()?;
    let k = iohmm.n_states;
    let na = iohmm.n_actions();
    let capacity: Vec<Vec<Vec<f64>>> = match failure {
        FailureSpec::LastHiddenState => {
            if k < 2 {
                return Err(PomdpError::Dimension(
                    "need at least one operating state plus failure".into(),
                ));
            }
            iohmm.transitions.clone()
        }
        FailureSpec::Hazard(h) => {
            if h.len() != na || h.iter().any(|r| r.len() != k) {
                return Err(PomdpError::Dimension(format!("hazard must be {na}x{k}")));
            }
            if h.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(PomdpError::InvalidArgument(
                    "hazard entries must lie in [0, 1]".into(),
                ));
            }
            (0..na)
                .map(|a| {
                    let mut m: Vec<Vec<f64>> = iohmm.transitions[a]
                        .iter()
                        .zip(&h[a])
                        .map(|(row, &p)| {
                            let mut r: Vec<f64> = row.iter().map(|x| x * (1.0 - p)).collect();
                            r.push(p);
                            r
                        })
                        .collect();
                    m.push(unit(k + 1, k));
                    m
                })
                .collect()
        }
    };
    let n = capacity[0].len();

    let z: Vec<Vec<Vec<f64>>> = match observation {
        ObservationSource::Matrix(b) => vec![observation_rows(b, n)?; na + 1],
        ObservationSource::Gmm {
            model,
            samples,
            seed,
        } => {
            if model.dim() != iohmm.dim() {
                return Err(PomdpError::Dimension(format!(
                    "GMM has dimension {}, IOHMM has {}",
                    model.dim(),
                    iohmm.dim()
                )));
            }
            if *samples == 0 {
                return Err(PomdpError::InvalidArgument(
                    "need at least one sample per state".into(),
                ));
            }
            let per_group = (0..iohmm.n_groups())
                .map(|g| {
                    gmm_rows(iohmm, model, g, *samples, *seed)
                        .and_then(|rows| observation_rows(&rows, n))
                })
                .collect::<Result<Vec<_>, _>>()?;
            // PM is observed through the first emission group
            (0..na)
                .map(|a| per_group[iohmm.group_of(a)].clone())
                .chain(std::iter::once(per_group[0].clone()))
                .collect()
        }
    };
    assemble(capacity, iohmm.actions.clone(), z, costs, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::EmissionMode;
    use approx::assert_abs_diff_eq;

    fn costs(n: usize, actions: &[&str]) -> CostTable {
        let mut labels: Vec<String> = actions.iter().map(|s| s.to_string()).collect();
        labels.push(PM_LABEL.into());
        let mut values: Vec<Vec<f64>> = (0..actions.len())
            .map(|a| {
                let mut r = vec![1.0 + a as f64; n];
                r[n - 1] = -10.0;
                r
            })
            .collect();
        let mut pm = vec![-2.0; n];
        pm[n - 1] = -10.0;
        values.push(pm);
        CostTable {
            actions: labels,
            states: state_labels(n),
            values,
        }
    }

    #[test]
    fn repair_and_pm_rows_reset() {
        let a = vec![vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.0, 0.0, 1.0],
        ]];
        let b = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let m = build_pomdp_from_matrices(&a, &b, &costs(3, &["go"]), 0.9).unwrap();
        assert_eq!(m.actions, vec!["go", "PM"]);
        assert_eq!(m.states, vec!["1", "2", "F"]);
        assert_eq!(m.transitions[0][2], vec![1.0, 0.0, 0.0]);
        for s in 0..3 {
            assert_eq!(m.transitions[1][s], vec![1.0, 0.0, 0.0]);
        }
        assert_eq!(m.observations[0][2], vec![0.2, 0.8]);
        assert_eq!(m.pm_action, Some(1));
        assert_eq!(m.failure_state, Some(2));
    }

    #[test]
    fn hazard_augments_dynamics() {
        let mut io = crate::iohmm::IohmmModel {
            n_states: 2,
            actions: vec!["go".into()],
            emission_mode: EmissionMode::Shared,
            transitions: vec![vec![vec![0.5, 0.5], vec![0.0, 1.0]]],
            means: vec![vec![vec![0.0], vec![10.0]]],
            covariances: vec![vec![vec![vec![1.0]], vec![vec![1.0]]]],
            initial: vec![1.0, 0.0],
            sort_key: 0,
        };
        let hazard = FailureSpec::Hazard(vec![vec![0.0, 0.2]]);
        let gmm = GmmModel {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![0.0], vec![10.0]],
            covariances: vec![vec![vec![1.0]], vec![vec![1.0]]],
            sort_key: 0,
        };
        let src = ObservationSource::Gmm {
            model: gmm,
            samples: 500,
            seed: 1,
        };
        let m = build_pomdp(&io, &src, &costs(3, &["go"]), 0.95, &hazard).unwrap();
        assert_eq!(m.transitions[0][1], vec![0.0, 0.8, 0.2]);
        assert!(m.observations[0][0][0] > 0.99);
        assert!(m.observations[0][1][1] > 0.99);
        assert_eq!(m.observations[0][2], m.observations[0][1]);

        io.actions = vec!["other".into()];
        assert!(build_pomdp(&io, &src, &costs(3, &["go"]), 0.95, &hazard).is_err());
    }

    #[test]
    fn invalid_gamma_and_shapes() {
        let a = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let b = vec![vec![1.0]];
        assert_eq!(
            build_pomdp_from_matrices(&a, &b, &costs(2, &["go"]), 1.0),
            Err(PomdpError::InvalidGamma(1.0))
        );
        let b3 = vec![vec![1.0]; 3];
        assert!(matches!(
            build_pomdp_from_matrices(&a, &b3, &costs(2, &["go"]), 0.5),
            Err(PomdpError::Dimension(_))
        ));
    }

    #[test]
    fn rates_round_trip() {
        let t = costs(4, &["a", "b"]);
        let rates = CostRates::from_table(&t).unwrap();
        assert_eq!(rates.operate, vec![1.0, 2.0]);
        assert_eq!((rates.pm, rates.failure), (-2.0, -10.0));
        assert_eq!(rates.table(4), t);
        let mut uneven = t.clone();
        uneven.values[0][1] = 5.0;
        assert!(CostRates::from_table(&uneven).is_err());
    }

    #[test]
    fn emission_rows_are_renormalised() {
        let a = vec![vec![vec![0.5, 0.5], vec![0.0, 1.0]]];
        let b = vec![vec![0.1983, 0.8013], vec![0.5, 0.5]];
        let m = build_pomdp_from_matrices(&a, &b, &costs(2, &["go"]), 0.5).unwrap();
        assert_abs_diff_eq!(
            m.observations[0][0].iter().sum::<f64>(),
            1.0,
            epsilon = 1e-15
        );
    }
}
