use cbm_core::features::{extract_features, SignalWindow};
use cbm_core::gmm::{discretize, responsibilities, GmmModel};
use cbm_core::iohmm::{forward_backward, EmissionMode, IohmmModel, Sequence};
use cbm_core::pomdp::{pbvi_solve, policy_value, prune, AlphaVector, PbviConfig, PomdpModel};
use proptest::prelude::*;

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(normalize)
}

fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(simplex(cols), rows)
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 8..64).prop_filter("non-constant", |x| {
        x.iter().any(|v| (v - x[0]).abs() > 1e-3)
    })
}

fn pomdp(n_s: usize, n_a: usize, n_o: usize) -> impl Strategy<Value = PomdpModel> {
    (
        prop::collection::vec(stochastic(n_s, n_s), n_a),
        prop::collection::vec(stochastic(n_s, n_o), n_a),
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n_s), n_a),
    )
        .prop_map(move |(transitions, observations, r)| PomdpModel {
            states: (1..=n_s).map(|i| i.to_string()).collect(),
            actions: (0..n_a).map(|a| format!("a{a}")).collect(),
            transitions,
            observations,
            r,
            gamma: 0.5,
            pm_action: None,
            failure_state: None,
        })
}

/// Upper-triangular rows for a left-to-right IOHMM.
fn left_to_right(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, k), k).prop_map(move |raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, row)| {
                let row: Vec<f64> = row
                    .into_iter()
                    .enumerate()
                    .map(|(j, p)| if j < i { 0.0 } else { p })
                    .collect();
                normalize(row)
            })
            .collect()
    })
}

fn iohmm(k: usize) -> impl Strategy<Value = IohmmModel> {
    (
        prop::collection::vec(left_to_right(k), 2),
        prop::collection::vec(-3.0f64..3.0, k),
    )
        .prop_map(move |(transitions, mut mus)| {
            mus.sort_by(f64::total_cmp);
            for i in 1..k {
                if mus[i] - mus[i - 1] < 0.1 {
                    mus[i] = mus[i - 1] + 0.1;
                }
            }
            let mut initial = vec![0.0; k];
            initial[0] = 1.0;
            IohmmModel {
                n_states: k,
                actions: vec!["a".into(), "b".into()],
                emission_mode: EmissionMode::Shared,
                transitions,
                means: vec![mus.iter().map(|m| vec![*m]).collect()],
                covariances: vec![vec![vec![vec![1.0]]; k]],
                initial,
                sort_key: 0,
            }
        })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_scale_with_amplitude(x in signal(), c in 0.1f64..10.0) {
        let f = extract_features(SignalWindow::new(&x).unwrap()).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let g = extract_features(SignalWindow::new(&scaled).unwrap()).unwrap();
        prop_assert!(close(g.rms, c * f.rms, 1e-9));
        prop_assert!(close(g.mean, c * f.mean, 1e-9));
        prop_assert!(close(g.std, c * f.std, 1e-9));
        prop_assert!(close(g.peak_to_peak, c * f.peak_to_peak, 1e-9));
        prop_assert!(close(g.energy, c * c * f.energy, 1e-9));
        prop_assert!(close(g.margin_factor, f.margin_factor / c, 1e-9));
        for (a, b) in [
            (g.skewness, f.skewness),
            (g.kurtosis, f.kurtosis),
            (g.crest_factor, f.crest_factor),
            (g.shape_factor, f.shape_factor),
            (g.impulse_factor, f.impulse_factor),
        ] {
            prop_assert!(close(a, b, 1e-9));
        }
    }

    #[test]
    fn features_ignore_sample_order(x in signal(), shift in 0usize..64) {
        let f = extract_features(SignalWindow::new(&x).unwrap()).unwrap();
        let mut y = x.clone();
        y.rotate_left(shift % x.len());
        y.reverse();
        let g = extract_features(SignalWindow::new(&y).unwrap()).unwrap();
        for (a, b) in f.to_array().iter().zip(g.to_array()) {
            prop_assert!(close(*a, b, 1e-9));
        }
    }

    #[test]
    fn posteriors_are_distributions(
        model in iohmm(3),
        obs in prop::collection::vec(-4.0f64..4.0, 2..30),
        acts in prop::collection::vec(0usize..2, 30),
    ) {
        let seq = Sequence::new(obs.iter().map(|o| vec![*o]).collect(), acts[..obs.len()].to_vec());
        let post = forward_backward(&seq, &model).unwrap();
        prop_assert!(post.loglik.is_finite());
        for g in &post.gamma {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for (t, xi) in post.xi.iter().enumerate() {
            let total: f64 = xi.iter().flatten().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for (k, g) in post.gamma[t].iter().enumerate() {
                prop_assert!((xi[k].iter().sum::<f64>() - g).abs() < 1e-9);
            }
            for l in 0..3 {
                for k in 0..l {
                    prop_assert_eq!(xi[l][k], 0.0);
                }
            }
        }
    }

    #[test]
    fn belief_updates_stay_on_the_simplex(m in pomdp(4, 2, 3), b in simplex(4), a in 0usize..2) {
        let probs = m.observation_probs(&b, a);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (o, p) in probs.iter().enumerate() {
            let next = m.belief_update(&b, a, o).unwrap();
            prop_assert!(*p > 0.0);
            prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(next.iter().all(|x| *x >= 0.0));
        }
        let predicted = m.predict(&b, a);
        let mut mix = [0.0; 4];
        for (o, p) in probs.iter().enumerate() {
            for (s, x) in m.belief_update(&b, a, o).unwrap().iter().enumerate() {
                mix[s] += p * x;
            }
        }
        for (x, y) in mix.iter().zip(&predicted) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_sum_to_one(
        weights in simplex(3),
        means in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 3),
        vars in prop::collection::vec(0.1f64..4.0, 3),
        o in prop::collection::vec(-20.0f64..20.0, 2),
    ) {
        let model = GmmModel {
            k: 3,
            weights,
            means,
            covariances: vars.iter().map(|v| vec![vec![*v, 0.0], vec![0.0, *v]]).collect(),
            sort_key: 0,
        };
        let r = responsibilities(&model, &o).unwrap();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(discretize(&model, &o).unwrap(), best);
    }

    #[test]
    fn prune_keeps_only_undominated(
        raw in prop::collection::vec(prop::collection::vec(-3i32..3, 3), 1..20),
    ) {
        let alphas: Vec<AlphaVector> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| AlphaVector { values: v.iter().map(|x| *x as f64).collect(), action: i })
            .collect();
        let kept = prune(alphas.clone());
        prop_assert!(!kept.is_empty());
        for (i, a) in kept.iter().enumerate() {
            for (j, b) in kept.iter().enumerate() {
                if i != j {
                    prop_assert!(!a.values.iter().zip(&b.values).all(|(x, y)| x >= y));
                }
            }
        }
        for a in &alphas {
            prop_assert!(kept.iter().any(|k| k.values.iter().zip(&a.values).all(|(x, y)| x >= y)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reward_shift_moves_values_uniformly(m in pomdp(3, 2, 2), c in -4.0f64..4.0, b in simplex(3)) {
        let cfg = PbviConfig { improve_tol: 1e-12, max_expansions: 3, max_beliefs: 60, ..Default::default() };
        let b0 = vec![1.0, 0.0, 0.0];
        let base = pbvi_solve(&m, &b0, &cfg).unwrap();
        let mut shifted = m.clone();
        for row in &mut shifted.r {
            for x in row {
                *x += c;
            }
        }
        let moved = pbvi_solve(&shifted, &b0, &cfg).unwrap();
        let offset = c / (1.0 - m.gamma);
        for belief in base.beliefs.iter().chain([&b]) {
            let (v0, a0) = policy_value(&base, belief);
            let (v1, a1) = policy_value(&moved, belief);
            prop_assert!((v1 - v0 - offset).abs() < 1e-6, "{} vs {}", v1 - v0, offset);
            if base.beliefs.contains(belief) {
                prop_assert_eq!(a0, a1);
            }
        }
    }
}
