//! Gaussian mixture over feature vectors, used as the discrete observation alphabet.

use crate::gaussian::{log_sum_exp, weighted_moments, Gaussian, GaussianError};
use crate::kmeans::kmeans;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid mixture: {0}")]
    InvalidModel(String),
    #[error("component {index}: {source}")]
    Component {
        index: usize,
        #[source]
        source: GaussianError,
    },
    #[error("log-likelihood became non-finite at iteration {iteration}")]
    NoProgress { iteration: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|delta loglik| / max(1, |loglik|)`.
    pub tol: f64,
    pub ridge: f64,
    pub seed: u64,
    /// Restrict covariances to their diagonal.
    pub diagonal: bool,
    /// Feature index used to order components.
    pub sort_key: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-8,
            ridge: 1e-6,
            seed: 0,
            diagonal: false,
            sort_key: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major D x D per component.
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub sort_key: usize,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood of every evaluated iterate; the last entry belongs to `model`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components re-seeded after their weight collapsed.
    pub reseeds: usize,
}

/// A mixture with factorised component densities, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Mixture {
    log_weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        let bad = |m: String| Err(GmmError::InvalidModel(m));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.weights.len() != self.k
            || self.means.len() != self.k
            || self.covariances.len() != self.k
        {
            return bad(format!(
                "expected {} weights, means and covariances",
                self.k
            ));
        }
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("weights must form a probability vector".into());
        }
        let d = self.dim();
        if d == 0
            || self
                .means
                .iter()
                .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
        {
            return bad("means must be finite vectors of equal dimension".into());
        }
        if self.sort_key >= d {
            return bad(format!(
                "sort key {} out of range for dimension {d}",
                self.sort_key
            ));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<Mixture, GmmError> {
        self.validate()?;
        let components = self
            .means
            .iter()
            .zip(&self.covariances)
            .enumerate()
            .map(|(index, (m, c))| {
                Gaussian::new(m, c).map_err(|source| GmmError::Component { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Mixture {
            log_weights: self.weights.iter().map(|w| w.ln()).collect(),
            components,
        })
    }
}

impl Mixture {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn check(&self, o: &[f64]) -> Result<(), GmmError> {
        if o.len() != self.dim() {
            return Err(GmmError::Dimension(format!(
                "observation has {} features, mixture expects {}",
                o.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `ln(phi_i N(o; mu_i, Sigma_i))` per component.
    fn joint(&self, o: &[f64]) -> Vec<f64> {
        self.log_weights
            .iter()
            .zip(&self.components)
            .map(|(lw, g)| lw + g.log_pdf(o))
            .collect()
    }

    pub fn log_density(&self, o: &[f64]) -> Result<f64, GmmError> {
        self.check(o)?;
        Ok(log_sum_exp(&self.joint(o)))
    }

    pub fn responsibilities(&self, o: &[f64]) -> Result<Vec<f64>, GmmError> {
        self.check(o)?;
        let j = self.joint(o);
        let z = log_sum_exp(&j);
        if !z.is_finite() {
            return Err(GmmError::Dimension("observation is not finite".into()));
        }
        Ok(j.iter().map(|x| (x - z).exp()).collect())
    }

    pub fn discretize(&self, o: &[f64]) -> Result<usize, GmmError> {
        let r = self.responsibilities(o)?;
        Ok(argmax_low(&r))
    }

    pub fn loglik(&self, points: &[Vec<f64>]) -> Result<f64, GmmError> {
        points.iter().map(|p| self.log_density(p)).sum()
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

pub fn responsibilities(model: &GmmModel, o: &[f64]) -> Result<Vec<f64>, GmmError> {
    model.prepare()?.responsibilities(o)
}

/// Most responsible component; ties go to the lower index.
pub fn discretize(model: &GmmModel, o: &[f64]) -> Result<usize, GmmError> {
    model.prepare()?.discretize(o)
}

fn identity(d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { scale } else { 0.0 }).collect())
        .collect()
}

fn sort_components(model: &mut GmmModel) {
    let key = model.sort_key;
    let mut order: Vec<usize> = (0..model.k).collect();
    order.sort_by(|&a, &b| model.means[a][key].total_cmp(&model.means[b][key]));
    model.weights = order.iter().map(|&i| model.weights[i]).collect();
    model.means = order.iter().map(|&i| model.means[i].clone()).collect();
    model.covariances = order
        .iter()
        .map(|&i| model.covariances[i].clone())
        .collect();
}

/// EM from a k-means start; ridge is added to every covariance update.
pub fn fit_gmm(points: &[Vec<f64>], k: usize, cfg: &GmmConfig) -> Result<GmmFit, GmmError> {
    if k == 0 {
        return Err(GmmError::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.ridge <= 0.0 {
        return Err(GmmError::InvalidArgument("ridge must be positive".into()));
    }
    if points.len() < k {
        return Err(GmmError::TooFewPoints {
            needed: k,
            got: points.len(),
        });
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(GmmError::Dimension(
            "points must share a positive dimension".into(),
        ));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GmmError::InvalidArgument("points must be finite".into()));
    }
    if cfg.sort_key >= d {
        return Err(GmmError::InvalidArgument(format!(
            "sort key {} out of range for {d} features",
            cfg.sort_key
        )));
    }
    let n = points.len();
    let rows: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();

    let km = kmeans(&rows, k, cfg.seed, 300);
    let mut model = GmmModel {
        k,
        weights: vec![0.0; k],
        means: Vec::with_capacity(k),
        covariances: Vec::with_capacity(k),
        sort_key: cfg.sort_key,
    };
    for j in 0..k {
        let w: Vec<f64> = km
            .assignment
            .iter()
            .map(|&a| if a == j { 1.0 } else { 0.0 })
            .collect();
        model.weights[j] = w.iter().sum::<f64>() / n as f64;
        let (m, c) = weighted_moments(&rows, &w, cfg.ridge, cfg.diagonal)
            .unwrap_or_else(|| (km.centroids[j].clone(), identity(d, cfg.ridge)));
        model.means.push(m);
        model.covariances.push(c);
    }
    let global = weighted_moments(&rows, &vec![1.0; n], cfg.ridge, cfg.diagonal)
        .expect("non-empty data has positive weight")
        .1;

    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut reseeds = 0;
    loop {
        let mix = model.prepare()?;
        let joints: Vec<Vec<f64>> = rows.iter().map(|p| mix.joint(p)).collect();
        let norms: Vec<f64> = joints.iter().map(|j| log_sum_exp(j)).collect();
        let ll: f64 = norms.iter().sum();
        if !ll.is_finite() {
            return Err(GmmError::NoProgress {
                iteration: iterations,
            });
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev).abs() < cfg.tol * prev.abs().max(1.0) {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations >= cfg.max_iters {
            break;
        }

        let resp: Vec<Vec<f64>> = joints
            .iter()
            .zip(&norms)
            .map(|(j, z)| j.iter().map(|x| (x - z).exp()).collect())
            .collect();
        for j in 0..k {
            let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            let total: f64 = w.iter().sum();
            model.weights[j] = total / n as f64;
            if model.weights[j] < 1e-12 {
                continue;
            }
            if let Some((m, c)) = weighted_moments(&rows, &w, cfg.ridge, cfg.diagonal) {
                model.means[j] = m;
                model.covariances[j] = c;
            }
        }
        // a collapsed component restarts at the worst-explained point
        for j in 0..k {
            if model.weights[j] >= 1e-12 {
                continue;
            }
            let worst = (0..n)
                .min_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)))
                .expect("n >= k >= 1");
            model.means[j] = points[worst].clone();
            model.covariances[j] = global.clone();
            model.weights[j] = 1.0 / n as f64;
            reseeds += 1;
        }
        let s: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= s);
        iterations += 1;
    }
    sort_components(&mut model);
    Ok(GmmFit {
        model,
        trace,
        iterations,
        converged,
        reseeds,
    })
}
