//! Published bearing and turbofan matrices, embedded for replay and tests.

use crate::io::{read_cost_table, read_matrix};
use crate::pomdp::{build_pomdp_from_matrices, CostTable, PomdpModel};

pub const BEARING_A1: &str = include_str!("../fixtures/bearing/A1.csv");
pub const BEARING_A2: &str = include_str!("../fixtures/bearing/A2.csv");
pub const BEARING_A3: &str = include_str!("../fixtures/bearing/A3.csv");
pub const BEARING_B: &str = include_str!("../fixtures/bearing/B.csv");
pub const BEARING_COSTS: &str = include_str!("../fixtures/bearing/costs.csv");

/// Discount used for the bearing fixture.
pub const BEARING_GAMMA: f64 = 0.95;

/// Capacity transition matrices for C=1.2, 1.3 and 1.5, each 6x6 with `F` last.
pub fn bearing_transitions() -> Vec<Vec<Vec<f64>>> {
    [BEARING_A1, BEARING_A2, BEARING_A3]
        .iter()
        .map(|s| read_matrix(s.as_bytes()).expect("embedded fixture parses"))
        .collect()
}

/// 6x5 state-by-symbol emission matrix.
pub fn bearing_emission() -> Vec<Vec<f64>> {
    read_matrix(BEARING_B.as_bytes()).expect("embedded fixture parses")
}

pub fn bearing_costs() -> CostTable {
    read_cost_table(BEARING_COSTS.as_bytes()).expect("embedded fixture parses")
}

/// The bearing POMDP: states 1..5 and F, actions C=1.2, C=1.3, C=1.5 and PM.
pub fn bearing_pomdp(gamma: f64) -> PomdpModel {
    build_pomdp_from_matrices(
        &bearing_transitions(),
        &bearing_emission(),
        &bearing_costs(),
        gamma,
    )
    .expect("bearing fixture is a valid POMDP")
}

/// Learned three-state turbofan transition matrix; the last state absorbs.
pub fn fd001_transitions() -> Vec<Vec<f64>> {
    vec![
        vec![0.9887, 0.0113, 0.0],
        vec![0.0, 0.9722, 0.0278],
        vec![0.0, 0.0, 1.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bearing_model_shape() {
        let m = bearing_pomdp(BEARING_GAMMA);
        assert_eq!(m.n_states(), 6);
        assert_eq!(m.actions, vec!["C=1.2", "C=1.3", "C=1.5", "PM"]);
        assert_eq!(m.n_observations(), 5);
        assert_eq!(m.transitions[0][0][..2], [0.9330, 0.0670]);
        assert_eq!(m.transitions[2][5], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for s in 0..6 {
            assert_eq!(m.transitions[3][s][0], 1.0);
        }
    }

    #[test]
    fn bearing_rewards() {
        let m = bearing_pomdp(BEARING_GAMMA);
        let uniform = [0.2, 0.2, 0.2, 0.2, 0.2, 0.0];
        assert_abs_diff_eq!(
            m.expected_reward(&uniform, 0).unwrap(),
            1.2,
            epsilon = 1e-12
        );
        let b = [0.0, 0.0, 0.0, 0.0, 0.5, 0.5];
        assert_abs_diff_eq!(m.expected_reward(&b, 0).unwrap(), -11.9, epsilon = 1e-12);
    }

    #[test]
    fn fd001_is_left_to_right() {
        let a = fd001_transitions();
        for (l, row) in a.iter().enumerate() {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(row[..l].iter().all(|&x| x == 0.0));
        }
    }
}
