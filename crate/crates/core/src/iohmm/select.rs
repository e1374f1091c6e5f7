use super::{gem_fit, GemConfig, IohmmError, IohmmModel, TrainingDataset};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub loglik: f64,
    pub num_params: usize,
    pub aic: f64,
    pub bic: f64,
    pub train_sec: f64,
    /// Set when the fit for this K failed; the numeric columns are then NaN.
    pub error: Option<String>,
}

/// Free parameters: allowed transition entries minus one per row (per
/// action), Gaussian means and unique covariance entries per emission group,
/// and `K - 1` for the initial distribution.
pub fn free_parameters(model: &IohmmModel, constrained: bool) -> usize {
    let k = model.n_states;
    let d = model.dim();
    let allowed = if constrained { k * (k + 1) / 2 } else { k * k };
    model.n_actions() * (allowed - k) + model.n_groups() * k * (d + d * (d + 1) / 2) + (k - 1)
}

pub fn aic(loglik: f64, num_params: usize) -> f64 {
    2.0 * num_params as f64 - 2.0 * loglik
}

pub fn bic(loglik: f64, num_params: usize, n_obs: usize) -> f64 {
    num_params as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// Fits one model per K and tabulates information criteria.
pub fn select_k(
    data: &TrainingDataset,
    actions: &[String],
    k_range: &[usize],
    cfg: &GemConfig,
) -> Result<Vec<SelectionRow>, IohmmError> {
    if k_range.is_empty() {
        return Err(IohmmError::InvalidArgument("k range is empty".into()));
    }
    let n = data.total_observations();
    Ok(k_range
        .iter()
        .map(|&k| {
            let start = Instant::now();
            match gem_fit(data, actions, k, cfg) {
                Ok(fit) => {
                    let ll = *fit.trace.last().expect("trace has at least one entry");
                    let p = free_parameters(&fit.model, cfg.constrained);
                    SelectionRow {
                        k,
                        loglik: ll,
                        num_params: p,
                        aic: aic(ll, p),
                        bic: bic(ll, p, n),
                        train_sec: start.elapsed().as_secs_f64(),
                        error: None,
                    }
                }
                Err(e) => SelectionRow {
                    k,
                    loglik: f64::NAN,
                    num_params: 0,
                    aic: f64::NAN,
                    bic: f64::NAN,
                    train_sec: start.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

/// Row with the smallest BIC among successful fits.
pub fn best_by_bic(rows: &[SelectionRow]) -> Option<&SelectionRow> {
    rows.iter()
        .filter(|r| r.error.is_none())
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
}
