mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Condition-based maintenance: constrained IOHMM training, POMDP planning and policy evaluation.
#[derive(Debug, Parser)]
#[command(name = "cbm", version)]
pub struct Cli {
    /// Seed for every random stream (k-means seeding, observation-matrix sampling, simulation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML project configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for report and model files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    /// The published bearing matrices (capacities 1.2, 1.3, 1.5).
    Bearing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mapping {
    Verbatim,
    Bayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Stateless,
    Recursive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Observation {
    Symbol,
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emissions {
    Shared,
    ActionDependent,
}

/// Where the POMDP comes from: a fixture, printed matrices, or learned models.
#[derive(Debug, Clone, Args)]
pub struct PomdpInputs {
    #[arg(long, value_enum)]
    pub fixture: Option<Fixture>,
    /// Trained IOHMM JSON.
    #[arg(long)]
    pub iohmm: Option<PathBuf>,
    /// Fitted GMM JSON used to estimate the observation matrix.
    #[arg(long)]
    pub gmm: Option<PathBuf>,
    /// Per-capacity transition matrix CSVs with the failure state last, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub transitions: Vec<PathBuf>,
    /// State-by-symbol emission matrix CSV.
    #[arg(long)]
    pub emission: Option<PathBuf>,
    /// Cost table CSV: `action,<state labels...>` with a PM row.
    #[arg(long)]
    pub costs: Option<PathBuf>,
    /// Action-by-state failure hazard CSV; failure becomes an extra state.
    #[arg(long)]
    pub hazard: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Draws per state when estimating the observation matrix from a GMM.
    #[arg(long)]
    pub z_samples: Option<usize>,
}

/// Artifacts needed to act online.
#[derive(Debug, Clone, Args)]
pub struct DecisionInputs {
    #[arg(long)]
    pub pomdp: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub gmm: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "verbatim")]
    pub mapping: Mapping,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the eleven time-domain features from a sample file.
    Features {
        /// One `value` column, or `epoch,value` with one feature vector per epoch.
        #[arg(long)]
        input: PathBuf,
        /// Window length for a single-column stream.
        #[arg(long)]
        window: Option<usize>,
        /// Hop between windows for a single-column stream.
        #[arg(long)]
        hop: Option<usize>,
    },
    /// Train a left-to-right IOHMM with generalized EM.
    Train {
        /// Training table: `unit,action,<features...>[,failure]`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Action labels in index order; defaults to order of appearance.
        #[arg(long, value_delimiter = ',')]
        actions: Vec<String>,
        #[arg(long, value_enum)]
        emissions: Option<Emissions>,
        /// Disable the left-to-right projection and state sorting.
        #[arg(long)]
        unconstrained: bool,
    },
    /// Fit one IOHMM per K and tabulate AIC and BIC.
    SelectK {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Candidate K values, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        actions: Vec<String>,
    },
    /// Fit the Gaussian mixture defining the observation symbols.
    FitGmm {
        /// Training table, feature CSV or any numeric CSV.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Assemble a POMDP.
    BuildPomdp {
        #[command(flatten)]
        inputs: PomdpInputs,
    },
    /// Solve a POMDP with point-based value iteration.
    Solve {
        /// Existing POMDP JSON; otherwise one is built from the other inputs.
        #[arg(long)]
        pomdp: Option<PathBuf>,
        #[command(flatten)]
        inputs: PomdpInputs,
    },
    /// Choose an action for one signal window.
    Decide {
        #[command(flatten)]
        artifacts: DecisionInputs,
        /// Sample file holding one window.
        #[arg(long)]
        window: PathBuf,
    },
    /// Decide at every epoch of a signal, logging JSON lines.
    RunSession {
        #[command(flatten)]
        artifacts: DecisionInputs,
        /// `epoch,value` samples, or a single column split with --window and --hop.
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        hop: Option<usize>,
        #[arg(long, value_enum, default_value = "stateless")]
        mode: Mode,
    },
    /// Monte-Carlo evaluation of policies on a POMDP.
    Simulate {
        #[arg(long)]
        pomdp: Option<PathBuf>,
        /// Alpha-vector policy JSON.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Fixed-action baselines by label, comma separated.
        #[arg(long, value_delimiter = ',')]
        fixed: Vec<String>,
        /// Add a fixed baseline for every capacity action.
        #[arg(long)]
        baselines: bool,
        /// Threshold rule `ACTION,FROM_STATE,P`: PM once the belief mass on
        /// FROM_STATE and later states reaches P, ACTION otherwise.
        #[arg(long)]
        threshold: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_enum, default_value = "symbol")]
        observation: Observation,
        /// IOHMM whose emissions generate features in feature mode.
        #[arg(long)]
        iohmm: Option<PathBuf>,
        /// GMM that discretises generated features in feature mode.
        #[arg(long)]
        gmm: Option<PathBuf>,
    },
    /// Train, solve and simulate for each K.
    KSweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        /// Cost table with state-independent operating rewards.
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        actions: Vec<String>,
        #[arg(long)]
        k_gmm: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Unconstrained per-condition HMMs against the constrained IOHMM.
    CompareClassical {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        actions: Vec<String>,
    },
    /// Per-epoch RUL forecasts along run-to-failure sequences.
    Rul {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iohmm: Option<PathBuf>,
        /// Longest forecast, in epochs.
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
