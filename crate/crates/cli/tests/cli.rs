mod common;

use cbm_core::features::{extract_features, SignalWindow};
use cbm_core::io::{read_features, read_json};
use cbm_core::pomdp::{policy_value, Policy, PomdpModel};
use cbm_core::sim::SimReport;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

fn ok(args: &[&str], out: &Path) {
    let res = cbm(args, out);
    assert!(
        res.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&res.stderr)
    );
}

fn code(args: &[&str], out: &Path) -> (i32, String) {
    let res = cbm(args, out);
    (
        res.status.code().unwrap(),
        String::from_utf8_lossy(&res.stderr).into_owned(),
    )
}

fn epoch_file(path: &Path, epochs: &[Vec<f64>]) {
    let mut s = String::from("epoch,value\n");
    for (e, xs) in epochs.iter().enumerate() {
        for x in xs {
            s.push_str(&format!("{e},{x}\n"));
        }
    }
    fs::write(path, s).unwrap();
}

/// Training table from an independent generator with two features.
fn training_file(path: &Path, seed: u64, failure_column: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = three_state(0.8);
    let mut s = String::from("unit,action,x,y");
    if failure_column {
        s.push_str(",failure");
    }
    s.push('\n');
    for u in 0..6 {
        let (_, seq) = g.sample(&[u % 2; 40], &mut rng);
        for o in &seq.observations {
            s.push_str(&format!(
                "u{u},{},{},{}",
                ["slow", "fast"][u % 2],
                o[0],
                o[1]
            ));
            if failure_column {
                s.push_str(",0");
            }
            s.push('\n');
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn features_from_epochs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let epochs: Vec<Vec<f64>> = (0..4).map(|s| vibration(s, 64, &mut rng)).collect();
    let input = dir.path().join("signal.csv");
    epoch_file(&input, &epochs);
    ok(
        &["features", "--input", input.to_str().unwrap()],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("features.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 11);
    let back = read_features(text.as_bytes()).unwrap();
    assert_eq!(back.len(), 4);
    for (f, e) in back.iter().zip(&epochs) {
        let direct = extract_features(SignalWindow::new(e).unwrap()).unwrap();
        for (a, b) in f.to_array().iter().zip(direct.to_array()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn features_stream_needs_window_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("stream.csv");
    let body: String = (0..65)
        .map(|i| format!("{}\n", (i as f64 * 0.7).sin()))
        .collect();
    fs::write(&input, format!("value\n{body}")).unwrap();
    let path = input.to_str().unwrap();
    assert_eq!(code(&["features", "--input", path], dir.path()).0, 2);
    ok(
        &["features", "--input", path, "--window", "32", "--hop", "32"],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("features.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn empty_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "").unwrap();
    let (c, err) = code(
        &["features", "--input", input.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(c, 2);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn train_writes_model_and_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    training_file(&data, 2, true);
    ok(
        &[
            "--seed",
            "3",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--k",
            "3",
        ],
        dir.path(),
    );
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let ll: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(ll
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0)));
    let model: cbm_core::iohmm::IohmmModel = read_json(&dir.path().join("iohmm.json")).unwrap();
    assert_eq!(model.actions, vec!["slow", "fast"]);
    assert_eq!(model.backward_mass(), 0.0);
}

#[test]
fn train_single_state_converges_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    training_file(&data, 4, false);
    ok(
        &["train", "--data", data.to_str().unwrap(), "--k", "1"],
        dir.path(),
    );
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() <= 3, "{trace}");
}

#[test]
fn unknown_action_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    training_file(&data, 5, false);
    let (c, err) = code(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--k",
            "2",
            "--actions",
            "slow",
        ],
        dir.path(),
    );
    assert_eq!(c, 2);
    assert!(err.contains("unknown action"), "{err}");
}

#[test]
fn select_k_single_row_with_timing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    training_file(&data, 6, false);
    ok(
        &["select-k", "--data", data.to_str().unwrap(), "--ks", "2"],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("selection.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "K,loglik,num_params,aic,bic,train_sec,error"
    );
    assert_eq!(lines.count(), 1);
}

#[test]
fn solve_bearing_fixture() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "--fixture", "bearing"], dir.path());
    let policy: Policy = read_json(&dir.path().join("policy.json")).unwrap();
    let model: PomdpModel = read_json(&dir.path().join("pomdp.json")).unwrap();
    assert!(policy.alphas.len() >= 4);
    let mut e1 = vec![0.0; 6];
    e1[0] = 1.0;
    assert_eq!(model.actions[policy_value(&policy, &e1).1], "C=1.2");
}

#[test]
fn zero_discount_gives_myopic_policy() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["solve", "--fixture", "bearing", "--gamma", "0"],
        dir.path(),
    );
    let policy: Policy = read_json(&dir.path().join("policy.json")).unwrap();
    let model: PomdpModel = read_json(&dir.path().join("pomdp.json")).unwrap();
    for s in 0..model.n_states() {
        let mut e = vec![0.0; model.n_states()];
        e[s] = 1.0;
        let best = (0..model.n_actions())
            .map(|a| model.r[a][s])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((policy_value(&policy, &e).0 - best).abs() < 1e-9);
    }
}

#[test]
fn malformed_matrix_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("A.csv");
    fs::write(&bad, "1,F\n0.5,oops\n").unwrap();
    let b = dir.path().join("B.csv");
    fs::write(&b, "o1\n1.0\n").unwrap();
    let costs = dir.path().join("costs.csv");
    fs::write(&costs, "action,1,F\ngo,1,-5\nPM,-1,-5\n").unwrap();
    let (c, _) = code(
        &[
            "build-pomdp",
            "--transitions",
            bad.to_str().unwrap(),
            "--emission",
            b.to_str().unwrap(),
            "--costs",
            costs.to_str().unwrap(),
            "--gamma",
            "0.9",
        ],
        dir.path(),
    );
    assert_eq!(c, 2);
}

#[test]
fn printed_matrices_match_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/bearing");
    let f = |n: &str| fx.join(n).display().to_string();
    let transitions = format!("{},{},{}", f("A1.csv"), f("A2.csv"), f("A3.csv"));
    ok(
        &[
            "build-pomdp",
            "--transitions",
            &transitions,
            "--emission",
            &f("B.csv"),
            "--costs",
            &f("costs.csv"),
            "--gamma",
            "0.95",
        ],
        dir.path(),
    );
    let built: PomdpModel = read_json(&dir.path().join("pomdp.json")).unwrap();
    let fixture = cbm_core::fixtures::bearing_pomdp(0.95);
    assert_eq!(built.states, fixture.states);
    assert_eq!(built.actions, fixture.actions);
    assert_eq!(built.r, fixture.r);
    let close = |a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]| {
        a.iter()
            .flatten()
            .flatten()
            .zip(b.iter().flatten().flatten())
            .all(|(x, y)| (x - y).abs() < 1e-12)
    };
    assert!(close(&built.transitions, &fixture.transitions));
    assert!(close(&built.observations, &fixture.observations));
}

#[test]
fn degenerate_data_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("big.csv");
    fs::write(&data, "a\n1e300\n-1e300\n1e300\n").unwrap();
    assert_eq!(
        code(
            &["fit-gmm", "--data", data.to_str().unwrap(), "--k", "1"],
            dir.path()
        )
        .0,
        3
    );
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["simulate"], dir.path()).0, 2);
    assert_eq!(code(&["no-such-command"], dir.path()).0, 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(
        code(
            &[
                "--config",
                cfg.to_str().unwrap(),
                "solve",
                "--fixture",
                "bearing"
            ],
            dir.path()
        )
        .0,
        2
    );
}

#[test]
fn simulate_repeats_and_validates_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["solve", "--fixture", "bearing"], dir.path());
    let pomdp = dir.path().join("pomdp.json");
    let policy = dir.path().join("policy.json");
    let args = || {
        vec![
            "--seed".to_string(),
            "9".into(),
            "simulate".into(),
            "--pomdp".into(),
            pomdp.display().to_string(),
            "--policy".into(),
            policy.display().to_string(),
            "--fixed".into(),
            "C=1.5".into(),
            "--horizon".into(),
            "500".into(),
            "--runs".into(),
            "10".into(),
        ]
    };
    for out in ["r1", "r2"] {
        let a = args();
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&refs, &dir.path().join(out));
    }
    let r1 = fs::read(dir.path().join("r1/simulation.json")).unwrap();
    assert_eq!(r1, fs::read(dir.path().join("r2/simulation.json")).unwrap());
    let reports: Vec<SimReport> = serde_json::from_slice(&r1).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports[0].mean_total > reports[1].mean_total);
    assert!((0.0..=1.0).contains(&reports[0].pm_ratio));

    let (c, err) = code(
        &[
            "simulate",
            "--pomdp",
            pomdp.to_str().unwrap(),
            "--fixed",
            "C=9",
        ],
        dir.path(),
    );
    assert_eq!(c, 2);
    assert!(err.contains("unknown action"), "{err}");
}

#[test]
fn decide_picks_low_capacity_on_healthy_window() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let epochs: Vec<Vec<f64>> = (0..5)
        .flat_map(|s| (0..40).map(move |_| s))
        .map(|s| vibration(s, 64, &mut rng))
        .collect();
    let signal = dir.path().join("signal.csv");
    epoch_file(&signal, &epochs);
    ok(
        &["features", "--input", signal.to_str().unwrap()],
        dir.path(),
    );
    let feats = dir.path().join("features.csv");
    ok(
        &[
            "--seed",
            "1",
            "fit-gmm",
            "--data",
            feats.to_str().unwrap(),
            "--k",
            "5",
        ],
        dir.path(),
    );
    ok(&["solve", "--fixture", "bearing"], dir.path());
    let window = dir.path().join("window.csv");
    epoch_file(&window, &[vibration(0, 64, &mut rng)]);
    let o = |n: &str| dir.path().join(n).display().to_string();
    let res = cbm(
        &[
            "decide",
            "--pomdp",
            &o("pomdp.json"),
            "--policy",
            &o("policy.json"),
            "--gmm",
            &o("gmm.json"),
            "--window",
            window.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let d: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(d["symbol"], 0);
    assert_eq!(d["action_label"], "C=1.2");
    assert!(dir.path().join("decision.json").exists());

    ok(
        &[
            "run-session",
            "--pomdp",
            &o("pomdp.json"),
            "--policy",
            &o("policy.json"),
            "--gmm",
            &o("gmm.json"),
            "--signal",
            signal.to_str().unwrap(),
            "--mode",
            "recursive",
        ],
        dir.path(),
    );
    let log = fs::read_to_string(dir.path().join("session.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 200);
    for line in log.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["error"].is_null());
    }
}

#[test]
fn config_file_supplies_paths_and_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    training_file(&dir.path().join("train.csv"), 7, false);
    fs::write(
        dir.path().join("project.toml"),
        "seed = 4\n\n[paths]\ndata = \"train.csv\"\n\n[model]\nk = 2\n\n[gem]\nmax_iters = 5\n",
    )
    .unwrap();
    let cfg = dir.path().join("project.toml");
    ok(&["--config", cfg.to_str().unwrap(), "train"], dir.path());
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().count() <= 7);
    let (c, err) = code(&["compare-classical"], dir.path());
    assert_eq!(c, 2);
    assert!(err.contains("--data"), "{err}");
}
