#![allow(dead_code)]

use cbm_core::iohmm::{EmissionMode, IohmmModel, Sequence, TrainingDataset};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;
use std::process::{Command, Output};

/// Left-to-right generator with isotropic Gaussian emissions, independent of the library's sampler.
pub struct Generator {
    /// `[action][from][to]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `[state][dim]`
    pub means: Vec<Vec<f64>>,
    pub sd: f64,
}

fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl Generator {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    fn emit(&self, s: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.means[s]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.sd * z
            })
            .collect()
    }

    /// States and observations under `actions`, starting in state 0.
    pub fn sample(&self, actions: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Sequence) {
        let mut s = 0;
        let mut states = Vec::new();
        let mut obs = Vec::new();
        for (t, &a) in actions.iter().enumerate() {
            if t > 0 {
                s = draw(&self.transitions[a][s], rng);
            }
            states.push(s);
            obs.push(self.emit(s, rng));
        }
        (states, Sequence::new(obs, actions.to_vec()))
    }

    /// Runs under a constant action until the last state is entered.
    pub fn run_to_failure(
        &self,
        action: usize,
        max_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<Sequence> {
        let last = self.k() - 1;
        let mut s = 0;
        let mut obs = vec![self.emit(0, rng)];
        while s != last {
            if obs.len() >= max_len {
                return None;
            }
            s = draw(&self.transitions[action][s], rng);
            obs.push(self.emit(s, rng));
        }
        let n = obs.len();
        Some(Sequence {
            observations: obs,
            actions: vec![action; n],
            failed: true,
        })
    }

    /// The generator as a model, for model-matched evaluation.
    pub fn model(&self, actions: &[&str]) -> IohmmModel {
        let k = self.k();
        let d = self.means[0].len();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if i == j { self.sd * self.sd } else { 0.0 })
                    .collect()
            })
            .collect();
        IohmmModel {
            n_states: k,
            actions: actions.iter().map(|s| s.to_string()).collect(),
            emission_mode: EmissionMode::Shared,
            transitions: self.transitions.clone(),
            means: vec![self.means.clone()],
            covariances: vec![vec![cov; k]],
            initial: (0..k).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
            sort_key: 0,
        }
    }
}

/// Two-action, three-state monotone generator with 2-D emissions.
pub fn three_state(sd: f64) -> Generator {
    Generator {
        transitions: vec![
            vec![
                vec![0.95, 0.05, 0.0],
                vec![0.0, 0.95, 0.05],
                vec![0.0, 0.0, 1.0],
            ],
            vec![
                vec![0.85, 0.15, 0.0],
                vec![0.0, 0.85, 0.15],
                vec![0.0, 0.0, 1.0],
            ],
        ],
        means: vec![vec![0.0, 0.0], vec![3.0, 2.0], vec![6.0, 4.0]],
        sd,
    }
}

/// `n_units` sequences of length `len`, unit `i` held at action `i % 2`.
pub fn per_unit_dataset(
    g: &Generator,
    n_units: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingDataset {
    TrainingDataset::new(
        (0..n_units)
            .map(|i| g.sample(&vec![i % g.transitions.len(); len], rng).1)
            .collect(),
    )
}

/// `n_units` sequences of length `len` with an independent random action every epoch.
pub fn mixed_dataset(
    g: &Generator,
    n_units: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> TrainingDataset {
    let na = g.transitions.len();
    TrainingDataset::new(
        (0..n_units)
            .map(|_| {
                let actions: Vec<usize> = (0..len).map(|_| rng.random_range(0..na)).collect();
                g.sample(&actions, rng).1
            })
            .collect(),
    )
}

pub fn cbm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

/// Vibration-like samples: amplitude grows with the hidden state.
pub fn vibration(state: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amp = 1.0 + 1.5 * state as f64;
    (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(rng);
            amp * (0.3 * i as f64).sin() + 0.3 * amp * z
        })
        .collect()
}
