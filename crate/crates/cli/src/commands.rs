use crate::config::{require, ProjectConfig};
use crate::error::{CliError, Result};
use crate::{
    Cli, Command, DecisionInputs, Emissions, Fixture, Mapping, Mode, Observation, PomdpInputs,
};
use cbm_core::features::{extract_features, extract_sequence, FeatureVector, SignalWindow};
use cbm_core::fixtures;
use cbm_core::gmm::{fit_gmm, GmmModel};
use cbm_core::io::{
    self, read_cost_table, read_json, read_matrix, read_samples, read_table, read_training,
    write_json, write_json_lines, write_records, Samples, TrainingTable,
};
use cbm_core::iohmm::{gem_fit, select_k, EmissionMode, IohmmModel, DEFAULT_RUL_QUANTILES};
use cbm_core::pomdp::{
    build_pomdp, build_pomdp_from_matrices, pbvi_solve, CostRates, FailureSpec, ObservationSource,
    Policy, PomdpModel,
};
use cbm_core::runtime::{
    decide_stateless, run_session, BeliefMapping, DecisionContext, SessionMode,
};
use cbm_core::sim::{
    compare_classical, k_sweep, rul_experiment, simulate, ObservationMode, PolicySource, SimConfig,
    SimReport, StateEmission, SweepInputs,
};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

const DEFAULT_Z_SAMPLES: usize = 2000;

struct Ctx {
    cfg: ProjectConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Usage(format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }

    fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        Ok(write_records(io::create(&self.path(name)?)?, rows)?)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        Ok(write_json(&self.path(name)?, value)?)
    }

    /// Whitespace-separated columns with a `#` header, for plotting tools.
    fn dat(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = io::create(&self.path(name)?)?;
        let write = |w: &mut dyn Write| -> std::io::Result<()> {
            writeln!(w, "# {}", header.join(" "))?;
            for r in rows {
                writeln!(w, "{}", r.join(" "))?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| CliError::Data(e.to_string()))
    }

    fn actions(&self, flag: &[String]) -> Option<Vec<String>> {
        if flag.is_empty() {
            self.cfg.actions.clone()
        } else {
            Some(flag.to_vec())
        }
    }

    fn training(&self, data: Option<PathBuf>, actions: &[String]) -> Result<TrainingTable> {
        let path = require(data, &self.cfg.paths.data, "data")?;
        let known = self.actions(actions);
        Ok(read_training(io::open(&path)?, known.as_deref())?)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None => ProjectConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let ctx = Ctx {
        cfg,
        seed,
        out: cli.out,
    };
    match cli.command {
        Command::Features { input, window, hop } => features(&ctx, &input, window, hop),
        Command::Train {
            data,
            k,
            actions,
            emissions,
            unconstrained,
        } => train(&ctx, data, k, &actions, emissions, unconstrained),
        Command::SelectK { data, ks, actions } => select(&ctx, data, &ks, &actions),
        Command::FitGmm { data, k } => gmm(&ctx, data, k),
        Command::BuildPomdp { inputs } => {
            let model = build(&ctx, &inputs)?;
            ctx.json("pomdp.json", &model)
        }
        Command::Solve { pomdp, inputs } => solve(&ctx, pomdp, &inputs),
        Command::Decide { artifacts, window } => decide(&ctx, &artifacts, &window),
        Command::RunSession {
            artifacts,
            signal,
            window,
            hop,
            mode,
        } => session(&ctx, &artifacts, &signal, window, hop, mode),
        Command::Simulate {
            pomdp,
            policy,
            fixed,
            baselines,
            threshold,
            horizon,
            runs,
            observation,
            iohmm,
            gmm,
        } => {
            let sim = SimArgs {
                pomdp,
                policy,
                fixed,
                baselines,
                threshold,
                horizon,
                runs,
                observation,
                iohmm,
                gmm,
            };
            simulate_cmd(&ctx, sim)
        }
        Command::KSweep {
            data,
            ks,
            costs,
            actions,
            k_gmm,
            gamma,
            horizon,
            runs,
        } => sweep(
            &ctx, data, &ks, costs, &actions, k_gmm, gamma, horizon, runs,
        ),
        Command::CompareClassical { data, k, actions } => compare(&ctx, data, k, &actions),
        Command::Rul {
            data,
            iohmm,
            horizon,
        } => rul(&ctx, data, iohmm, horizon),
    }
}

fn features(ctx: &Ctx, input: &Path, window: Option<usize>, hop: Option<usize>) -> Result<()> {
    let vectors: Vec<FeatureVector> = match read_samples(io::open(input)?)? {
        Samples::Epochs(epochs) => epochs
            .iter()
            .map(|e| extract_features(SignalWindow::new(e)?))
            .collect::<std::result::Result<_, _>>()?,
        Samples::Stream(s) => {
            let (Some(w), Some(h)) = (window, hop) else {
                return Err(CliError::Usage(
                    "a single-column stream needs --window and --hop".into(),
                ));
            };
            extract_sequence(&s, w, h)?
        }
    };
    Ok(io::write_features(
        io::create(&ctx.path("features.csv")?)?,
        &vectors,
    )?)
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    loglik: f64,
}

fn trace_rows(trace: &[f64]) -> Vec<TraceRow> {
    trace
        .iter()
        .enumerate()
        .map(|(iteration, &loglik)| TraceRow { iteration, loglik })
        .collect()
}

fn train(
    ctx: &Ctx,
    data: Option<PathBuf>,
    k: Option<usize>,
    actions: &[String],
    emissions: Option<Emissions>,
    unconstrained: bool,
) -> Result<()> {
    let table = ctx.training(data, actions)?;
    let k = require(k, &ctx.cfg.model.k, "k")?;
    let mut cfg = ctx.cfg.gem(ctx.seed);
    if let Some(e) = emissions {
        cfg.emission_mode = match e {
            Emissions::Shared => EmissionMode::Shared,
            Emissions::ActionDependent => EmissionMode::ActionDependent,
        };
    }
    if unconstrained {
        cfg.constrained = false;
    }
    let fit = gem_fit(&table.dataset, &table.actions, k, &cfg)?;
    if !fit.converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            fit.iterations
        );
    }
    ctx.json("iohmm.json", &fit.model)?;
    ctx.csv("trace.csv", &trace_rows(&fit.trace))
}

fn select(ctx: &Ctx, data: Option<PathBuf>, ks: &[usize], actions: &[String]) -> Result<()> {
    let table = ctx.training(data, actions)?;
    let rows = select_k(&table.dataset, &table.actions, ks, &ctx.cfg.gem(ctx.seed))?;
    ctx.csv("selection.csv", &rows)
}

/// Feature rows from a training table, a feature CSV or a bare numeric CSV.
fn point_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with("unit,") {
        let t = read_training(text.as_bytes(), None)?;
        return Ok(t
            .dataset
            .sequences
            .into_iter()
            .flat_map(|s| s.observations)
            .collect());
    }
    let t = read_table(text.as_bytes())?;
    if t.rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Data(format!(
            "{}: missing or non-finite values",
            path.display()
        )));
    }
    Ok(t.rows)
}

fn gmm(ctx: &Ctx, data: Option<PathBuf>, k: Option<usize>) -> Result<()> {
    let path = require(data, &ctx.cfg.paths.data, "data")?;
    let k = require(k, &ctx.cfg.model.k_gmm, "k")?;
    let fit = fit_gmm(&point_rows(&path)?, k, &ctx.cfg.gmm(ctx.seed))?;
    ctx.json("gmm.json", &fit.model)?;
    ctx.csv("gmm_trace.csv", &trace_rows(&fit.trace))
}

fn build(ctx: &Ctx, inp: &PomdpInputs) -> Result<PomdpModel> {
    if inp.fixture == Some(Fixture::Bearing) {
        let gamma = inp
            .gamma
            .or(ctx.cfg.model.gamma)
            .unwrap_or(fixtures::BEARING_GAMMA);
        return Ok(build_pomdp_from_matrices(
            &fixtures::bearing_transitions(),
            &fixtures::bearing_emission(),
            &fixtures::bearing_costs(),
            gamma,
        )?);
    }
    let gamma = require(inp.gamma, &ctx.cfg.model.gamma, "gamma")?;
    let costs = read_cost_table(io::open(&require(
        inp.costs.clone(),
        &ctx.cfg.paths.costs,
        "costs",
    )?)?)?;
    if !inp.transitions.is_empty() {
        let capacity = inp
            .transitions
            .iter()
            .map(|p| read_matrix(io::open(p)?))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let emission =
            read_matrix(io::open(inp.emission.as_ref().ok_or_else(|| {
                CliError::Usage("--transitions needs --emission".into())
            })?)?)?;
        return Ok(build_pomdp_from_matrices(
            &capacity, &emission, &costs, gamma,
        )?);
    }
    let iohmm: IohmmModel = read_json(&require(inp.iohmm.clone(), &ctx.cfg.paths.iohmm, "iohmm")?)?;
    let observation = match &inp.emission {
        Some(p) => ObservationSource::Matrix(read_matrix(io::open(p)?)?),
        None => ObservationSource::Gmm {
            model: read_json(&require(inp.gmm.clone(), &ctx.cfg.paths.gmm, "gmm")?)?,
            samples: inp
                .z_samples
                .or(ctx.cfg.model.z_samples)
                .unwrap_or(DEFAULT_Z_SAMPLES),
            seed: ctx.seed,
        },
    };
    let failure = match &inp.hazard {
        Some(p) => FailureSpec::Hazard(read_matrix(io::open(p)?)?),
        None => FailureSpec::LastHiddenState,
    };
    Ok(build_pomdp(&iohmm, &observation, &costs, gamma, &failure)?)
}

fn initial_belief(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    b
}

fn solve(ctx: &Ctx, pomdp: Option<PathBuf>, inputs: &PomdpInputs) -> Result<()> {
    let model: PomdpModel = match pomdp {
        Some(p) => read_json(&p)?,
        None => build(ctx, inputs)?,
    };
    model.validate()?;
    let policy = pbvi_solve(&model, &initial_belief(model.n_states()), &ctx.cfg.pbvi)?;
    if !policy.stats.converged {
        log::warn!(
            "value improvement stopped with residual {}",
            policy.stats.residual
        );
    }
    ctx.json("pomdp.json", &model)?;
    ctx.json("policy.json", &policy)
}

fn decision_context(ctx: &Ctx, a: &DecisionInputs) -> Result<DecisionContext> {
    let model: PomdpModel = read_json(&require(a.pomdp.clone(), &ctx.cfg.paths.pomdp, "pomdp")?)?;
    let policy: Policy = read_json(&require(a.policy.clone(), &ctx.cfg.paths.policy, "policy")?)?;
    let gmm: GmmModel = read_json(&require(a.gmm.clone(), &ctx.cfg.paths.gmm, "gmm")?)?;
    let mapping = match a.mapping {
        Mapping::Verbatim => BeliefMapping::Verbatim,
        Mapping::Bayes => BeliefMapping::Bayes,
    };
    Ok(DecisionContext::new(gmm, model, policy, mapping)?)
}

fn decide(ctx: &Ctx, artifacts: &DecisionInputs, window: &Path) -> Result<()> {
    let dc = decision_context(ctx, artifacts)?;
    let samples = match read_samples(io::open(window)?)? {
        Samples::Stream(s) => s,
        Samples::Epochs(mut e) if e.len() == 1 => e.remove(0),
        Samples::Epochs(_) => {
            return Err(CliError::Usage(
                "decide takes a single window; use run-session".into(),
            ))
        }
    };
    let d = decide_stateless(&samples, &dc)?;
    let line = serde_json::to_string(&d).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{line}");
    ctx.json("decision.json", &d)
}

fn session(
    ctx: &Ctx,
    artifacts: &DecisionInputs,
    signal: &Path,
    window: Option<usize>,
    hop: Option<usize>,
    mode: Mode,
) -> Result<()> {
    let dc = decision_context(ctx, artifacts)?;
    let epochs = match read_samples(io::open(signal)?)? {
        Samples::Epochs(e) => e,
        Samples::Stream(s) => {
            let (Some(w), Some(h)) = (window, hop) else {
                return Err(CliError::Usage(
                    "a single-column signal needs --window and --hop".into(),
                ));
            };
            if w < 2 || h == 0 {
                return Err(CliError::Usage(
                    "--window must be at least 2 and --hop at least 1".into(),
                ));
            }
            (0..)
                .map(|i| i * h)
                .take_while(|start| start + w <= s.len())
                .map(|start| s[start..start + w].to_vec())
                .collect()
        }
    };
    let mode = match mode {
        Mode::Stateless => SessionMode::Stateless,
        Mode::Recursive => SessionMode::Recursive,
    };
    let rows = run_session(&epochs, &dc, mode);
    Ok(write_json_lines(
        io::create(&ctx.path("session.jsonl")?)?,
        &rows,
    )?)
}

struct SimArgs {
    pomdp: Option<PathBuf>,
    policy: Option<PathBuf>,
    fixed: Vec<String>,
    baselines: bool,
    threshold: Option<String>,
    horizon: Option<usize>,
    runs: Option<usize>,
    observation: Observation,
    iohmm: Option<PathBuf>,
    gmm: Option<PathBuf>,
}

fn action_index(model: &PomdpModel, label: &str) -> Result<usize> {
    model
        .actions
        .iter()
        .position(|a| a == label)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "unknown action {label:?}; known: {}",
                model.actions.join(", ")
            ))
        })
}

fn threshold_rule(model: &PomdpModel, spec: &str) -> Result<PolicySource> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let bad = || {
        CliError::Usage(format!(
            "--threshold expects ACTION,FROM_STATE,P, got {spec:?}"
        ))
    };
    let [action, state, p] = parts[..] else {
        return Err(bad());
    };
    let pm = model
        .pm_action
        .ok_or_else(|| CliError::Usage("the POMDP has no PM action".into()))?;
    let from_state = model
        .states
        .iter()
        .position(|s| s == state)
        .ok_or_else(|| CliError::Usage(format!("unknown state {state:?}")))?;
    Ok(PolicySource::Threshold {
        action: action_index(model, action)?,
        pm,
        from_state,
        threshold: p.parse().map_err(|_| bad())?,
    })
}

fn feature_mode(ctx: &Ctx, model: &PomdpModel, args: &SimArgs) -> Result<ObservationMode> {
    let iohmm: IohmmModel =
        read_json(&require(args.iohmm.clone(), &ctx.cfg.paths.iohmm, "iohmm")?)?;
    let gmm: GmmModel = read_json(&require(args.gmm.clone(), &ctx.cfg.paths.gmm, "gmm")?)?;
    let mut emissions: Vec<StateEmission> = iohmm.means[0]
        .iter()
        .zip(&iohmm.covariances[0])
        .map(|(m, c)| StateEmission {
            mean: m.clone(),
            covariance: c.clone(),
        })
        .collect();
    if emissions.len() + 1 == model.n_states() {
        emissions.push(emissions.last().expect("IOHMM has states").clone());
    }
    Ok(ObservationMode::Features { emissions, gmm })
}

#[derive(Serialize)]
struct SimSummary<'a> {
    policy: &'a str,
    mean_total: f64,
    std_total: f64,
    mean_discounted: f64,
    std_discounted: f64,
    pm_ratio: f64,
    failures: u64,
}

fn simulate_cmd(ctx: &Ctx, args: SimArgs) -> Result<()> {
    let model: PomdpModel =
        read_json(&require(args.pomdp.clone(), &ctx.cfg.paths.pomdp, "pomdp")?)?;
    let mut sources = Vec::new();
    let policy_path = args.policy.clone().or_else(|| {
        let none_given = args.fixed.is_empty() && !args.baselines && args.threshold.is_none();
        if none_given {
            ctx.cfg.paths.policy.clone()
        } else {
            None
        }
    });
    if let Some(p) = policy_path {
        sources.push(PolicySource::Pomdp(read_json(&p)?));
    }
    let mut fixed: Vec<usize> = args
        .fixed
        .iter()
        .map(|l| action_index(&model, l))
        .collect::<Result<_>>()?;
    if args.baselines {
        fixed.extend((0..model.n_actions()).filter(|&a| Some(a) != model.pm_action));
    }
    let mut seen = Vec::new();
    for a in fixed {
        if !seen.contains(&a) {
            seen.push(a);
            sources.push(PolicySource::Fixed(a));
        }
    }
    if let Some(t) = &args.threshold {
        sources.push(threshold_rule(&model, t)?);
    }
    if sources.is_empty() {
        return Err(CliError::Usage(
            "give --policy, --fixed, --baselines or --threshold".into(),
        ));
    }
    let defaults = SimConfig::default();
    let observation = match args.observation {
        Observation::Symbol => ObservationMode::Symbol,
        Observation::Features => feature_mode(ctx, &model, &args)?,
    };
    let cfg = SimConfig {
        horizon: args
            .horizon
            .or(ctx.cfg.sim.horizon)
            .unwrap_or(defaults.horizon),
        n_runs: args.runs.or(ctx.cfg.sim.n_runs).unwrap_or(defaults.n_runs),
        seed: ctx.seed,
        observation,
    };
    let reports = sources
        .iter()
        .map(|s| simulate(&model, s, &cfg))
        .collect::<std::result::Result<Vec<SimReport>, _>>()?;
    let summary: Vec<SimSummary> = reports
        .iter()
        .map(|r| SimSummary {
            policy: &r.policy,
            mean_total: r.mean_total,
            std_total: r.std_total,
            mean_discounted: r.mean_discounted,
            std_discounted: r.std_discounted,
            pm_ratio: r.pm_ratio,
            failures: r.failures,
        })
        .collect();
    ctx.json("simulation.json", &reports)?;
    ctx.csv("simulation.csv", &summary)
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    ctx: &Ctx,
    data: Option<PathBuf>,
    ks: &[usize],
    costs: Option<PathBuf>,
    actions: &[String],
    k_gmm: Option<usize>,
    gamma: Option<f64>,
    horizon: Option<usize>,
    runs: Option<usize>,
) -> Result<()> {
    let table = ctx.training(data, actions)?;
    let costs = read_cost_table(io::open(&require(costs, &ctx.cfg.paths.costs, "costs")?)?)?;
    let defaults = SimConfig::default();
    let inputs = SweepInputs {
        gem: ctx.cfg.gem(ctx.seed),
        gmm_k: require(k_gmm, &ctx.cfg.model.k_gmm, "k-gmm")?,
        gmm: ctx.cfg.gmm(ctx.seed),
        rates: CostRates::from_table(&costs)?,
        gamma: require(gamma, &ctx.cfg.model.gamma, "gamma")?,
        pbvi: ctx.cfg.pbvi.clone(),
        z_samples: ctx.cfg.model.z_samples.unwrap_or(DEFAULT_Z_SAMPLES),
    };
    let sim = SimConfig {
        horizon: horizon.or(ctx.cfg.sim.horizon).unwrap_or(defaults.horizon),
        n_runs: runs.or(ctx.cfg.sim.n_runs).unwrap_or(defaults.n_runs),
        seed: ctx.seed,
        observation: ObservationMode::Symbol,
    };
    let rows = k_sweep(&table.dataset, &table.actions, ks, &inputs, &sim)?;
    let dat: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                r.mean_discounted.to_string(),
                r.pm_ratio.to_string(),
            ]
        })
        .collect();
    ctx.csv("k_sweep.csv", &rows)?;
    ctx.dat("k_sweep.dat", &["K", "mean_discounted", "pm_ratio"], &dat)
}

fn compare(ctx: &Ctx, data: Option<PathBuf>, k: Option<usize>, actions: &[String]) -> Result<()> {
    let table = ctx.training(data, actions)?;
    let k = require(k, &ctx.cfg.model.k, "k")?;
    let rows = compare_classical(&table.dataset, &table.actions, k, &ctx.cfg.gem(ctx.seed));
    ctx.csv("compare.csv", &rows)
}

#[derive(Serialize)]
struct RulSummary {
    coverage: f64,
    n_epochs: usize,
    n_excluded: usize,
}

fn rul(ctx: &Ctx, data: Option<PathBuf>, iohmm: Option<PathBuf>, horizon: usize) -> Result<()> {
    let model: IohmmModel = read_json(&require(iohmm, &ctx.cfg.paths.iohmm, "iohmm")?)?;
    let table = ctx.training(data, &model.actions)?;
    let report = rul_experiment(&table.dataset, &model, horizon, DEFAULT_RUL_QUANTILES)?;
    let dat: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            [r.sequence, r.t, r.true_rul, r.lower, r.median, r.upper]
                .iter()
                .map(ToString::to_string)
                .collect()
        })
        .collect();
    ctx.csv("rul.csv", &report.rows)?;
    ctx.dat(
        "rul.dat",
        &["sequence", "t", "true_rul", "lower", "median", "upper"],
        &dat,
    )?;
    ctx.json(
        "rul_summary.json",
        &RulSummary {
            coverage: report.coverage,
            n_epochs: report.n_epochs,
            n_excluded: report.n_excluded,
        },
    )
}
