//! Multivariate normal densities evaluated through a Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: mean has {mean}, covariance is {rows}x{cols}")]
    Dimension {
        mean: usize,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &[Vec<f64>]) -> Result<Self, GaussianError> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|r| r.len() != d) {
            return Err(GaussianError::Dimension {
                mean: d,
                rows: cov.len(),
                cols: cov.first().map_or(0, Vec::len),
            });
        }
        let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
        let chol = m
            .cholesky()
            .ok_or(GaussianError::NotPositiveDefinite)?
            .unpack();
        let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(GaussianError::NotPositiveDefinite);
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff =
            DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample(StandardNormal)),
        );
        (&self.mean + &self.chol * z).iter().copied().collect()
    }
}

/// Weighted mean and (biased) covariance plus `ridge * I`.
///
/// Returns `None` when the total weight is not positive.
pub fn weighted_moments(
    rows: &[&[f64]],
    weights: &[f64],
    ridge: f64,
    diagonal: bool,
) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = rows.first()?.len();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let mut mean = vec![0.0; d];
    for (x, &w) in rows.iter().zip(weights) {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut cov = vec![vec![0.0; d]; d];
    for (x, &w) in rows.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            let di = x[i] - mean[i];
            for j in 0..=i {
                if diagonal && i != j {
                    continue;
                }
                cov[i][j] += w * di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i][j] / total;
            cov[i][j] = v;
            cov[j][i] = v;
        }
        cov[i][i] += ridge;
    }
    Some((mean, cov))
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn univariate_density() {
        let g = Gaussian::new(&[1.0], &[vec![4.0]]).unwrap();
        // N(3; 1, 4) = exp(-0.5) / sqrt(8 pi)
        let expect = -0.5 - 0.5 * (8.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(g.log_pdf(&[3.0]), expect, epsilon = 1e-14);
    }

    #[test]
    fn bivariate_density_matches_closed_form() {
        let cov = vec![vec![2.0, 0.5], vec![0.5, 1.0]];
        let g = Gaussian::new(&[0.0, 1.0], &cov).unwrap();
        let det: f64 = 2.0 - 0.25;
        let inv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
        let d = [1.0, -1.0];
        let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1])
            + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let expect = -0.5 * q - 0.5 * (2.0 * LN_2PI + det.ln());
        assert_abs_diff_eq!(g.log_pdf(&[1.0, 0.0]), expect, epsilon = 1e-13);
    }

    #[test]
    fn rejects_singular() {
        assert_eq!(
            Gaussian::new(&[0.0, 0.0], &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap_err(),
            GaussianError::NotPositiveDefinite
        );
    }

    #[test]
    fn moments_with_ridge() {
        let a = [1.0, 2.0];
        let b = [3.0, 2.0];
        let (m, c) = weighted_moments(&[&a, &b], &[1.0, 1.0], 1e-6, false).unwrap();
        assert_eq!(m, vec![2.0, 2.0]);
        assert_abs_diff_eq!(c[0][0], 1.0 + 1e-6);
        assert_abs_diff_eq!(c[1][1], 1e-6);
        assert_eq!(c[0][1], 0.0);
        assert!(weighted_moments(&[&a], &[0.0], 1e-6, false).is_none());
    }
}
