//! Time-domain statistical descriptors of a vibration window.
//!
//! Skewness and kurtosis follow the rms-normalised, unaveraged form used by
//! the degradation pipeline: `sum((x - mean)^3) / rms^3` and
//! `sum((x - mean)^4) / rms^4`. They are not the textbook standardized
//! moments (no `1/N`, divided by rms instead of std). The peak value used by
//! the crest, impulse and margin factors is `max |x_i|`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column names, in canonical order, for feature CSV files.
pub const FEATURE_NAMES: [&str; 11] = [
    "rms", "mean", "std", "skewness", "kurtosis", "pp", "crest", "shape", "impulse", "margin",
    "energy",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("window needs at least 2 samples, got {0}")]
    EmptyWindow(usize),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("signal has zero rms; ratio features and normalised moments are undefined")]
    DegenerateSignal {
        /// Non-ratio features; the ratio fields and both moments are zeroed.
        partial: Box<FeatureVector>,
    },
    #[error("invalid windowing: window_len={window_len}, hop={hop}")]
    InvalidWindow { window_len: usize, hop: usize },
}

/// A validated window of raw samples.
#[derive(Debug, Clone, Copy)]
pub struct SignalWindow<'a> {
    samples: &'a [f64],
}

impl<'a> SignalWindow<'a> {
    pub fn new(samples: &'a [f64]) -> Result<Self, FeatureError> {
        if samples.len() < 2 {
            return Err(FeatureError::EmptyWindow(samples.len()));
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite { index });
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &'a [f64] {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: f64,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub peak_to_peak: f64,
    pub crest_factor: f64,
    pub shape_factor: f64,
    pub impulse_factor: f64,
    pub margin_factor: f64,
    pub energy: f64,
}

impl FeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.rms,
            self.mean,
            self.std,
            self.skewness,
            self.kurtosis,
            self.peak_to_peak,
            self.crest_factor,
            self.shape_factor,
            self.impulse_factor,
            self.margin_factor,
            self.energy,
        ]
    }

    pub fn from_array(v: [f64; 11]) -> Self {
        Self {
            rms: v[0],
            mean: v[1],
            std: v[2],
            skewness: v[3],
            kurtosis: v[4],
            peak_to_peak: v[5],
            crest_factor: v[6],
            shape_factor: v[7],
            impulse_factor: v[8],
            margin_factor: v[9],
            energy: v[10],
        }
    }
}

pub fn extract_features(window: SignalWindow<'_>) -> Result<FeatureVector, FeatureError> {
    let x = window.samples();
    let n = x.len() as f64;

    let energy: f64 = x.iter().map(|v| v * v).sum();
    let rms = (energy / n).sqrt();
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / n).sqrt();
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let peak = x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;

    let mut fv = FeatureVector {
        rms,
        mean,
        std,
        skewness: 0.0,
        kurtosis: 0.0,
        peak_to_peak: max - min,
        crest_factor: 0.0,
        shape_factor: 0.0,
        impulse_factor: 0.0,
        margin_factor: 0.0,
        energy,
    };
    if rms == 0.0 {
        return Err(FeatureError::DegenerateSignal {
            partial: Box::new(fv),
        });
    }
    // rms > 0 implies mean_abs > 0
    fv.skewness = m3 / rms.powi(3);
    fv.kurtosis = m4 / rms.powi(4);
    fv.crest_factor = peak / rms;
    fv.shape_factor = rms / mean_abs;
    fv.impulse_factor = peak / mean_abs;
    fv.margin_factor = peak / (mean_abs * mean_abs);
    Ok(fv)
}

/// Slides a window over `signal`; a trailing partial window is dropped.
pub fn extract_sequence(
    signal: &[f64],
    window_len: usize,
    hop: usize,
) -> Result<Vec<FeatureVector>, FeatureError> {
    if window_len < 2 || hop == 0 {
        return Err(FeatureError::InvalidWindow { window_len, hop });
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_len <= signal.len() {
        let w = SignalWindow::new(&signal[start..start + window_len])?;
        out.push(extract_features(w)?);
        start += hop;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn feats(x: &[f64]) -> FeatureVector {
        extract_features(SignalWindow::new(x).unwrap()).unwrap()
    }

    #[test]
    fn constant_signal() {
        let f = feats(&[1.0, 1.0, 1.0, 1.0]);
        let expect = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 4.0];
        for (a, b) in f.to_array().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn alternating_signal() {
        let f = feats(&[1.0, -1.0, 1.0, -1.0]);
        // mean, rms, std, pp, crest, shape, impulse, margin, energy, skew, kurt
        assert_abs_diff_eq!(f.mean, 0.0);
        assert_abs_diff_eq!(f.rms, 1.0);
        assert_abs_diff_eq!(f.std, 1.0);
        assert_abs_diff_eq!(f.peak_to_peak, 2.0);
        assert_abs_diff_eq!(f.crest_factor, 1.0);
        assert_abs_diff_eq!(f.shape_factor, 1.0);
        assert_abs_diff_eq!(f.impulse_factor, 1.0);
        assert_abs_diff_eq!(f.margin_factor, 1.0);
        assert_abs_diff_eq!(f.energy, 4.0);
        assert_abs_diff_eq!(f.skewness, 0.0);
        assert_abs_diff_eq!(f.kurtosis, 4.0);
    }

    #[test]
    fn two_sample_signal() {
        let f = feats(&[2.0, 0.0]);
        let s2 = 2.0_f64.sqrt();
        assert_abs_diff_eq!(f.rms, s2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.mean, 1.0);
        assert_abs_diff_eq!(f.std, 1.0);
        assert_abs_diff_eq!(f.peak_to_peak, 2.0);
        assert_abs_diff_eq!(f.crest_factor, 2.0 / s2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.shape_factor, s2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.impulse_factor, 2.0);
        assert_abs_diff_eq!(f.margin_factor, 2.0);
        assert_abs_diff_eq!(f.energy, 4.0);
    }

    #[test]
    fn short_and_degenerate_windows() {
        assert_eq!(
            SignalWindow::new(&[1.0]).unwrap_err(),
            FeatureError::EmptyWindow(1)
        );
        assert!(matches!(
            SignalWindow::new(&[1.0, f64::NAN]),
            Err(FeatureError::NonFinite { index: 1 })
        ));
        match extract_features(SignalWindow::new(&[0.0, 0.0, 0.0]).unwrap()) {
            Err(FeatureError::DegenerateSignal { partial }) => {
                assert_eq!(partial.rms, 0.0);
                assert_eq!(partial.energy, 0.0);
                assert_eq!(partial.crest_factor, 0.0);
            }
            other => panic!("expected degenerate signal, got {other:?}"),
        }
    }

    #[test]
    fn sequence_windowing() {
        let sig: Vec<f64> = (0..65).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        assert_eq!(extract_sequence(&sig[..64], 32, 32).unwrap().len(), 2);
        assert_eq!(extract_sequence(&sig, 32, 32).unwrap().len(), 2);
        assert_eq!(extract_sequence(&sig[..32], 64, 64).unwrap().len(), 0);
        assert_eq!(extract_sequence(&sig, 32, 16).unwrap().len(), 3);
        assert!(extract_sequence(&sig, 1, 1).is_err());
        assert!(extract_sequence(&sig, 4, 0).is_err());
    }
}
