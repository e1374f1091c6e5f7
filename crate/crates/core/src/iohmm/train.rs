use super::inference::{forward_backward_with, Posteriors};
use super::{EmissionMode, IohmmError, IohmmModel, TrainingDataset};
use crate::gaussian::weighted_moments;
use crate::kmeans::kmeans;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hyperparameters of [`gem_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GemConfig {
    pub max_iters: usize,
    /// Convergence threshold on `|delta loglik| / max(1, |loglik|)`.
    pub tol: f64,
    pub ridge: f64,
    pub seed: u64,
    pub emission_mode: EmissionMode,
    /// Feature index used to order states.
    pub sort_key: usize,
    /// `false` disables projection and sorting (classical baseline).
    pub constrained: bool,
}

impl Default for GemConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            ridge: 1e-6,
            seed: 0,
            emission_mode: EmissionMode::Shared,
            sort_key: 0,
            constrained: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GemFit {
    pub model: IohmmModel,
    /// Log-likelihood of every evaluated iterate; the last entry belongs to `model`.
    pub trace: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
}

fn point_mass(k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[0] = 1.0;
    v
}

fn uniform_transitions(k: usize, constrained: bool) -> Vec<Vec<f64>> {
    (0..k)
        .map(|l| {
            let lo = if constrained { l } else { 0 };
            let p = 1.0 / (k - lo) as f64;
            (0..k).map(|j| if j >= lo { p } else { 0.0 }).collect()
        })
        .collect()
}

/// Clusters one group's observations into `k` sorted Gaussians.
fn cluster_group(
    points: &[&[f64]],
    k: usize,
    ridge: f64,
    seed: u64,
    sort_key: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let km = kmeans(points, k, seed, 300);
    let mut comps: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..k)
        .map(|j| {
            let w: Vec<f64> = km
                .assignment
                .iter()
                .map(|&a| if a == j { 1.0 } else { 0.0 })
                .collect();
            weighted_moments(points, &w, ridge, false).unwrap_or_else(|| {
                let d = points[0].len();
                let cov = (0..d)
                    .map(|r| (0..d).map(|c| if r == c { ridge } else { 0.0 }).collect())
                    .collect();
                (km.centroids[j].clone(), cov)
            })
        })
        .collect();
    comps.sort_by(|a, b| a.0[sort_key].total_cmp(&b.0[sort_key]));
    comps.into_iter().unzip()
}

/// k-means initialisation: sorted centroids, within-cluster covariances plus
/// ridge, uniform transitions over allowed entries, point mass on state 0.
pub fn init_kmeans(
    data: &TrainingDataset,
    actions: &[String],
    k: usize,
    cfg: &GemConfig,
) -> Result<IohmmModel, IohmmError> {
    if k == 0 {
        return Err(IohmmError::InvalidArgument("K must be at least 1".into()));
    }
    if cfg.ridge <= 0.0 {
        return Err(IohmmError::InvalidArgument("ridge must be positive".into()));
    }
    let d = data.validate(actions.len())?;
    let n = data.total_observations();
    if n < k {
        return Err(IohmmError::TooFewObservations { needed: k, got: n });
    }
    if cfg.sort_key >= d {
        return Err(IohmmError::InvalidArgument(format!(
            "sort key {} out of range for {d} features",
            cfg.sort_key
        )));
    }
    let all: Vec<&[f64]> = data
        .sequences
        .iter()
        .flat_map(|s| s.observations.iter().map(Vec::as_slice))
        .collect();

    let (means, covariances) = match cfg.emission_mode {
        EmissionMode::Shared => {
            let (m, c) = cluster_group(&all, k, cfg.ridge, cfg.seed, cfg.sort_key);
            (vec![m], vec![c])
        }
        EmissionMode::ActionDependent => (0..actions.len())
            .map(|a| {
                let pts: Vec<&[f64]> = data
                    .sequences
                    .iter()
                    .flat_map(|s| {
                        s.observations
                            .iter()
                            .zip(&s.actions)
                            .filter(move |(_, &x)| x == a)
                            .map(|(o, _)| o.as_slice())
                    })
                    .collect();
                let pts = if pts.len() >= k { pts } else { all.clone() };
                cluster_group(
                    &pts,
                    k,
                    cfg.ridge,
                    cfg.seed.wrapping_add(a as u64),
                    cfg.sort_key,
                )
            })
            .unzip(),
    };

    Ok(IohmmModel {
        n_states: k,
        actions: actions.to_vec(),
        emission_mode: cfg.emission_mode,
        transitions: vec![uniform_transitions(k, cfg.constrained); actions.len()],
        means,
        covariances,
        initial: point_mass(k),
        sort_key: cfg.sort_key,
    })
}

/// Zeroes backward transitions and renormalises rows; an emptied row becomes a self-loop.
pub fn project_left_to_right(model: &mut IohmmModel) {
    for m in &mut model.transitions {
        for (l, row) in m.iter_mut().enumerate() {
            row[..l].iter_mut().for_each(|x| *x = 0.0);
            let s: f64 = row[l..].iter().sum();
            if s > 0.0 {
                row[l..].iter_mut().for_each(|x| *x /= s);
            } else {
                row[l] = 1.0;
            }
        }
    }
}

/// Relabels states so the sort-key coordinate of the means ascends.
///
/// For action-dependent emissions the key is averaged across groups. Returns
/// the permutation: new state `i` is old state `perm[i]`.
pub fn sort_states(model: &mut IohmmModel) -> Vec<usize> {
    let k = model.n_states;
    let key = |s: usize| -> f64 {
        model
            .means
            .iter()
            .map(|g| g[s][model.sort_key])
            .sum::<f64>()
            / model.means.len() as f64
    };
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return perm;
    }
    for g in 0..model.means.len() {
        model.means[g] = perm.iter().map(|&p| model.means[g][p].clone()).collect();
        model.covariances[g] = perm
            .iter()
            .map(|&p| model.covariances[g][p].clone())
            .collect();
    }
    model.initial = perm.iter().map(|&p| model.initial[p]).collect();
    for m in &mut model.transitions {
        *m = perm
            .iter()
            .map(|&pi| perm.iter().map(|&pj| m[pi][pj]).collect())
            .collect();
    }
    perm
}

/// Canonical left-to-right form: sort states by emission key, then project.
pub fn enforce_left_to_right(mut model: IohmmModel) -> IohmmModel {
    sort_states(&mut model);
    project_left_to_right(&mut model);
    model
}

fn m_step(
    data: &TrainingDataset,
    posts: &[Posteriors],
    model: &IohmmModel,
    ridge: f64,
) -> IohmmModel {
    let k = model.n_states;
    let n_actions = model.n_actions();
    let mut next = model.clone();

    let mut counts = vec![vec![vec![0.0; k]; k]; n_actions];
    for (s, p) in data.sequences.iter().zip(posts) {
        for (t, slice) in p.xi.iter().enumerate() {
            let a = s.actions[t + 1];
            for (c_row, x_row) in counts[a].iter_mut().zip(slice) {
                for (c, x) in c_row.iter_mut().zip(x_row) {
                    *c += x;
                }
            }
        }
    }
    for (a, c) in counts.iter().enumerate() {
        for (l, row) in c.iter().enumerate() {
            let den: f64 = row.iter().sum();
            if den > 1e-300 {
                next.transitions[a][l] = row.iter().map(|x| x / den).collect();
            }
        }
    }

    for g in 0..model.n_groups() {
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut gammas: Vec<&[f64]> = Vec::new();
        for (s, p) in data.sequences.iter().zip(posts) {
            for ((o, &a), gm) in s.observations.iter().zip(&s.actions).zip(&p.gamma) {
                if model.group_of(a) == g {
                    rows.push(o);
                    gammas.push(gm);
                }
            }
        }
        if rows.is_empty() {
            continue;
        }
        for state in 0..k {
            let w: Vec<f64> = gammas.iter().map(|gm| gm[state]).collect();
            if w.iter().sum::<f64>() <= 1e-300 {
                continue;
            }
            if let Some((m, c)) = weighted_moments(&rows, &w, ridge, false) {
                next.means[g][state] = m;
                next.covariances[g][state] = c;
            }
        }
    }
    next
}

fn e_step(
    data: &TrainingDataset,
    model: &IohmmModel,
) -> Result<(Vec<Posteriors>, f64), IohmmError> {
    let dens = model.densities()?;
    let posts = data
        .sequences
        .par_iter()
        .enumerate()
        .map(|(i, s)| forward_backward_with(s, model, &dens, i))
        .collect::<Result<Vec<_>, _>>()?;
    let ll = posts.iter().map(|p| p.loglik).sum();
    Ok((posts, ll))
}

/// Generalized EM with left-to-right projection and state sorting after every M-step.
pub fn gem_fit(
    data: &TrainingDataset,
    actions: &[String],
    k: usize,
    cfg: &GemConfig,
) -> Result<GemFit, IohmmError> {
    if data.sequences.is_empty() {
        return Err(IohmmError::TooFewObservations { needed: 1, got: 0 });
    }
    let mut model = init_kmeans(data, actions, k, cfg)?;
    if cfg.constrained {
        model = enforce_left_to_right(model);
    }
    for a in 0..actions.len() {
        let used = data
            .sequences
            .iter()
            .any(|s| s.actions.iter().skip(1).any(|&x| x == a));
        if !used {
            log::warn!(
                "action {:?} never drives a transition; its matrix keeps the prior",
                actions[a]
            );
        }
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (posts, ll) = match e_step(data, &model) {
            Ok(v) => v,
            Err(IohmmError::ZeroLikelihood(_)) if iterations > 0 => {
                return Err(IohmmError::NoProgress {
                    iteration: iterations,
                })
            }
            Err(e) => return Err(e),
        };
        if !ll.is_finite() {
            return Err(IohmmError::NoProgress {
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
        model = m_step(data, &posts, &model, cfg.ridge);
        if cfg.constrained {
            model = enforce_left_to_right(model);
            model.initial = point_mass(k);
        }
        iterations += 1;
    }
    Ok(GemFit {
        model,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::three_state;
    use super::super::{loglik, Sequence};
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blobs() -> TrainingDataset {
        let obs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![if i < 20 { 0.0 } else { 10.0 } + 0.05 * ((i * 7 % 5) as f64 - 2.0)])
            .collect();
        TrainingDataset::new(vec![Sequence::new(obs, vec![0; 40])])
    }

    #[test]
    fn kmeans_init_sorts_two_blobs() {
        let m = init_kmeans(&blobs(), &["a".into()], 2, &GemConfig::default()).unwrap();
        assert!((m.means[0][0][0] - 0.0).abs() < 0.1);
        assert!((m.means[0][1][0] - 10.0).abs() < 0.1);
        assert_eq!(m.transitions[0], vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(m.initial, vec![1.0, 0.0]);
    }

    #[test]
    fn single_state_init_and_constant_cluster() {
        let ds = TrainingDataset::new(vec![Sequence::new(vec![vec![2.0, 5.0]; 4], vec![0; 4])]);
        let m = init_kmeans(&ds, &["a".into()], 1, &GemConfig::default()).unwrap();
        assert_eq!(m.transitions, vec![vec![vec![1.0]]]);
        assert_eq!(m.means[0][0], vec![2.0, 5.0]);
        assert_eq!(m.covariances[0][0], vec![vec![1e-6, 0.0], vec![0.0, 1e-6]]);
        m.validate().unwrap();
        m.densities().unwrap();
    }

    #[test]
    fn too_few_observations() {
        let ds = TrainingDataset::new(vec![Sequence::new(vec![vec![1.0]], vec![0])]);
        assert!(matches!(
            init_kmeans(&ds, &["a".into()], 2, &GemConfig::default()),
            Err(IohmmError::TooFewObservations { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn projection_of_single_surviving_entry() {
        let mut m = three_state();
        m.transitions[0][1] = vec![0.3, 0.7, 0.0];
        project_left_to_right(&mut m);
        assert_eq!(m.transitions[0][1], vec![0.0, 1.0, 0.0]);
        m.transitions[0][1] = vec![1.0, 0.0, 0.0];
        project_left_to_right(&mut m);
        assert_eq!(m.transitions[0][1], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn canonical_model_is_fixed_point() {
        let m = three_state();
        assert_eq!(enforce_left_to_right(m.clone()), m);
    }

    #[test]
    fn swapped_two_state_model() {
        let m = IohmmModel {
            n_states: 2,
            actions: vec!["a".into()],
            emission_mode: EmissionMode::Shared,
            transitions: vec![vec![vec![1.0, 0.0], vec![0.3, 0.7]]],
            means: vec![vec![vec![5.0], vec![1.0]]],
            covariances: vec![vec![vec![vec![2.0]], vec![vec![1.0]]]],
            initial: vec![0.0, 1.0],
            sort_key: 0,
        };
        let mut sorted = m.clone();
        let perm = sort_states(&mut sorted);
        assert_eq!(perm, vec![1, 0]);
        // old state i lands at new index sigma(i) = position of i in perm
        let sigma = [1usize, 0];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(
                    sorted.transitions[0][sigma[i]][sigma[j]],
                    m.transitions[0][i][j]
                );
            }
        }
        assert_eq!(sorted.means[0], vec![vec![1.0], vec![5.0]]);
        assert_eq!(sorted.covariances[0][1], vec![vec![2.0]]);
        assert_eq!(sorted.initial, vec![1.0, 0.0]);
        let canon = enforce_left_to_right(m);
        assert_eq!(canon.transitions[0], vec![vec![0.7, 0.3], vec![0.0, 1.0]]);
        assert_eq!(canon.backward_mass(), 0.0);
    }

    #[test]
    fn single_state_converges_to_gaussian_mle() {
        let ds = blobs();
        let fit = gem_fit(&ds, &["a".into()], 1, &GemConfig::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        let obs: Vec<f64> = ds.sequences[0].observations.iter().map(|o| o[0]).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / obs.len() as f64;
        assert_abs_diff_eq!(fit.model.means[0][0][0], mean, epsilon = 1e-12);
        assert_abs_diff_eq!(
            fit.model.covariances[0][0][0][0],
            var + 1e-6,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            *fit.trace.last().unwrap(),
            loglik(&ds, &fit.model).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn unvisited_action_keeps_prior_row() {
        let ds = blobs();
        let fit = gem_fit(&ds, &["a".into(), "never".into()], 2, &GemConfig::default()).unwrap();
        assert_eq!(
            fit.model.transitions[1],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]]
        );
        assert_eq!(fit.model.backward_mass(), 0.0);
    }
}
