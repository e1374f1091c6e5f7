//! Python bindings: feature extraction, GMM symbols, POMDP solving, online decisions and simulation.

use cbm_core::features::{extract_features as extract, FeatureError, SignalWindow, FEATURE_NAMES};
use cbm_core::gmm::{fit_gmm, GmmConfig, GmmError, GmmModel};
use cbm_core::iohmm::{filter, IohmmError, IohmmModel, Sequence};
use cbm_core::pomdp::{pbvi_solve, policy_value, PbviConfig, Policy, PomdpError, PomdpModel};
use cbm_core::runtime::{
    decide_recursive, decide_stateless, BeliefMapping, DecisionContext, RuntimeError,
};
use cbm_core::sim::{simulate as run_sim, PolicySource, SimConfig};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pomdp_err(e: PomdpError) -> PyErr {
    match e {
        PomdpError::ZeroProbabilityObservation { .. } => PyArithmeticError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn gmm_err(e: GmmError) -> PyErr {
    match e {
        GmmError::NoProgress { .. } | GmmError::Component { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        other => value_err(other),
    }
}

fn feature_err(e: FeatureError) -> PyErr {
    value_err(e)
}

fn iohmm_err(e: IohmmError) -> PyErr {
    value_err(e)
}

fn runtime_err(e: RuntimeError) -> PyErr {
    value_err(e)
}

/// The eleven time-domain features of one window, in `FEATURE_NAMES` order.
#[pyfunction]
fn extract_features(samples: Vec<f64>) -> PyResult<Vec<f64>> {
    let w = SignalWindow::new(&samples).map_err(feature_err)?;
    Ok(extract(w).map_err(feature_err)?.to_array().to_vec())
}

#[pyfunction]
fn feature_names() -> Vec<&'static str> {
    FEATURE_NAMES.to_vec()
}

#[pyclass(name = "Gmm", from_py_object)]
#[derive(Clone)]
struct PyGmm {
    inner: GmmModel,
}

#[pymethods]
impl PyGmm {
    #[staticmethod]
    #[pyo3(signature = (points, k, seed=0, diagonal=false))]
    fn fit(points: Vec<Vec<f64>>, k: usize, seed: u64, diagonal: bool) -> PyResult<Self> {
        let cfg = GmmConfig {
            seed,
            diagonal,
            ..Default::default()
        };
        let fit = fit_gmm(&points, k, &cfg).map_err(gmm_err)?;
        Ok(Self { inner: fit.model })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: GmmModel = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(gmm_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    fn responsibilities(&self, o: Vec<f64>) -> PyResult<Vec<f64>> {
        cbm_core::gmm::responsibilities(&self.inner, &o).map_err(gmm_err)
    }

    fn discretize(&self, o: Vec<f64>) -> PyResult<usize> {
        cbm_core::gmm::discretize(&self.inner, &o).map_err(gmm_err)
    }
}

#[pyclass(name = "Pomdp", from_py_object)]
#[derive(Clone)]
struct PyPomdp {
    inner: PomdpModel,
}

#[pymethods]
impl PyPomdp {
    /// The bearing model with capacities 1.2, 1.3 and 1.5.
    #[staticmethod]
    #[pyo3(signature = (gamma=0.95))]
    fn bearing(gamma: f64) -> Self {
        Self {
            inner: cbm_core::fixtures::bearing_pomdp(gamma),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PomdpModel = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(pomdp_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions.clone()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn observation_probs(&self, b: Vec<f64>, action: usize) -> PyResult<Vec<f64>> {
        self.inner.check_belief(&b).map_err(pomdp_err)?;
        self.action(action)?;
        Ok(self.inner.observation_probs(&b, action))
    }

    fn belief_update(&self, b: Vec<f64>, action: usize, o: usize) -> PyResult<Vec<f64>> {
        self.action(action)?;
        self.inner.belief_update(&b, action, o).map_err(pomdp_err)
    }

    /// Point-based value iteration from `b0` (the first state by default).
    #[pyo3(signature = (b0=None, max_beliefs=1000, max_expansions=8))]
    fn solve(
        &self,
        b0: Option<Vec<f64>>,
        max_beliefs: usize,
        max_expansions: usize,
    ) -> PyResult<PyPolicy> {
        let b0 = b0.unwrap_or_else(|| {
            let mut e = vec![0.0; self.inner.n_states()];
            e[0] = 1.0;
            e
        });
        let cfg = PbviConfig {
            max_beliefs,
            max_expansions,
            ..Default::default()
        };
        let inner = pbvi_solve(&self.inner, &b0, &cfg).map_err(pomdp_err)?;
        Ok(PyPolicy { inner })
    }

    /// Monte-Carlo evaluation; returns the report as a JSON string.
    #[pyo3(signature = (policy=None, fixed=None, horizon=10_000, runs=100, seed=0))]
    fn simulate(
        &self,
        policy: Option<PyPolicy>,
        fixed: Option<&str>,
        horizon: usize,
        runs: usize,
        seed: u64,
    ) -> PyResult<String> {
        let source = match (policy, fixed) {
            (Some(p), None) => PolicySource::Pomdp(p.inner),
            (None, Some(label)) => PolicySource::Fixed(
                self.inner
                    .actions
                    .iter()
                    .position(|a| a == label)
                    .ok_or_else(|| value_err(format!("unknown action '{label}'")))?,
            ),
            _ => return Err(value_err("pass exactly one of policy or fixed")),
        };
        let cfg = SimConfig {
            horizon,
            n_runs: runs,
            seed,
            ..Default::default()
        };
        let report = run_sim(&self.inner, &source, &cfg).map_err(pomdp_err)?;
        serde_json::to_string(&report).map_err(value_err)
    }
}

impl PyPomdp {
    fn action(&self, a: usize) -> PyResult<()> {
        if a < self.inner.n_actions() {
            Ok(())
        } else {
            Err(value_err(format!("action {a} out of range")))
        }
    }
}

#[pyclass(name = "Policy", from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: Policy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Policy = serde_json::from_str(text).map_err(value_err)?;
        if inner.alphas.is_empty() {
            return Err(value_err("policy has no alpha vectors"));
        }
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.alphas.len()
    }

    /// `(value, action index)` of the best alpha vector at `b`.
    fn value(&self, b: Vec<f64>) -> PyResult<(f64, usize)> {
        if self.inner.alphas[0].values.len() != b.len() {
            return Err(value_err("belief length does not match the policy"));
        }
        Ok(policy_value(&self.inner, &b))
    }
}

#[pyclass(name = "Iohmm", from_py_object)]
#[derive(Clone)]
struct PyIohmm {
    inner: IohmmModel,
}

#[pymethods]
impl PyIohmm {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: IohmmModel = serde_json::from_str(text).map_err(value_err)?;
        inner.validate().map_err(iohmm_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    /// Filtered state distributions `P(S_t | o_1..o_t, a_1..a_t)`.
    fn filter(&self, observations: Vec<Vec<f64>>, actions: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        filter(&Sequence::new(observations, actions), &self.inner).map_err(iohmm_err)
    }
}

/// Online decision maker built from a GMM, a POMDP and its policy.
#[pyclass(name = "Decider")]
struct PyDecider {
    ctx: DecisionContext,
}

#[pymethods]
impl PyDecider {
    #[new]
    #[pyo3(signature = (gmm, pomdp, policy, bayes=false))]
    fn new(gmm: PyGmm, pomdp: PyPomdp, policy: PyPolicy, bayes: bool) -> PyResult<Self> {
        let mapping = if bayes {
            BeliefMapping::Bayes
        } else {
            BeliefMapping::Verbatim
        };
        let ctx = DecisionContext::new(gmm.inner, pomdp.inner, policy.inner, mapping)
            .map_err(runtime_err)?;
        Ok(Self { ctx })
    }

    /// Decision for one raw window as a JSON string; pass the previous belief and action to filter recursively.
    #[pyo3(signature = (samples, prev_belief=None, prev_action=None))]
    fn decide(
        &self,
        samples: Vec<f64>,
        prev_belief: Option<Vec<f64>>,
        prev_action: Option<usize>,
    ) -> PyResult<String> {
        let d = match (prev_belief, prev_action) {
            (Some(b), Some(a)) => decide_recursive(&samples, &b, a, &self.ctx),
            (None, None) => decide_stateless(&samples, &self.ctx),
            _ => return Err(value_err("prev_belief and prev_action go together")),
        }
        .map_err(runtime_err)?;
        serde_json::to_string(&d).map_err(value_err)
    }
}

#[pymodule]
fn cbm_pomdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(feature_names, m)?)?;
    m.add_class::<PyGmm>()?;
    m.add_class::<PyPomdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyIohmm>()?;
    m.add_class::<PyDecider>()?;
    Ok(())
}
