use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use fluidgate::io::{
    self, load_instance, write_episodes_csv, write_file, write_json, write_paired_csv,
    write_trace_csv, ExperimentConfig, IoError,
};
use fluidgate::lp::{self, check_nondegenerate, to_standard_form, LpError};
use fluidgate::market::{build_dlp, episode_seed, Market, MarketError};
use fluidgate::policy::{AcceptanceMode, PolicyConfig, PolicyKind, UnseenRule};
use fluidgate::sim::{self, SimError, SimSetup};
use fluidgate::stability::{
    bound_degenerate, stability_report, StabilityError, DEFAULT_ENUMERATION_LIMIT,
};

const THREADS_VAR: &str = "FLUIDGATE_THREADS";

#[derive(Parser)]
#[command(
    name = "fluidgate",
    version,
    about = "Adaptive LP re-solving for online allocation"
)]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "adaptive-unknown")]
    policy: PolicyKind,
    #[arg(long, value_enum, default_value = "binary")]
    acceptance: AcceptanceMode,
    #[arg(long, value_enum, default_value = "dual-price")]
    unseen: UnseenRule,
}

impl PolicyArgs {
    fn config(self) -> PolicyConfig {
        PolicyConfig {
            kind: self.policy,
            acceptance: self.acceptance,
            unseen: self.unseen,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fluid LP of an instance.
    Solve { instance: PathBuf },
    /// Degeneracy, stability constants and regret bounds of an instance.
    Stability {
        instance: PathBuf,
        /// Cap on candidate bases for dual enumeration.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_LIMIT)]
        limit: u128,
    },
    /// Run episodes at one horizon.
    Simulate {
        instance: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Horizon; defaults to the instance's.
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the per-period trace of trial 0.
        #[arg(long)]
        trace: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Regret statistics over a grid of horizons.
    Sweep {
        instance: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long = "T-grid", value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Monte Carlo estimate of the three-term regret decomposition.
    Decompose {
        instance: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Paired comparison of two policies on common random numbers.
    Compare {
        instance: PathBuf,
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 800)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "adaptive-unknown")]
        first: PolicyKind,
        #[arg(long, value_enum, default_value = "adaptive-known")]
        second: PolicyKind,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Regret against horizon on the nondegenerate and degenerate examples.
    Figure1 {
        /// Defaults to the bundled nondegenerate example.
        #[arg(long)]
        nondegenerate: Option<PathBuf>,
        /// Defaults to the bundled degenerate example.
        #[arg(long)]
        degenerate: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(
            long = "T-grid",
            value_delimiter = ',',
            default_value = "500,1000,2000,4000,8000"
        )]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "figure1")]
        out_dir: PathBuf,
    },
    /// Paired known- versus unknown-distribution regret.
    Figure2 {
        /// Defaults to the bundled nondegenerate example.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long = "T", default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value_t = 800)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Policy compared against the known-distribution one.
        #[arg(long, value_enum, default_value = "adaptive-unknown")]
        first: PolicyKind,
        #[arg(long, value_enum, default_value = "adaptive-known")]
        second: PolicyKind,
        #[arg(long, default_value = "figure2")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn stability_is_validation(e: &StabilityError) -> bool {
    match e {
        StabilityError::Degenerate(_)
        | StabilityError::NotUnique
        | StabilityError::OutsideBox(_)
        | StabilityError::HorizonTooShort(_) => true,
        StabilityError::Market(m) => market_is_validation(m),
        StabilityError::Lp(l) => lp_is_validation(l),
    }
}

fn market_is_validation(e: &MarketError) -> bool {
    match e {
        MarketError::Lp(l) => lp_is_validation(l),
        _ => true,
    }
}

fn lp_is_validation(e: &LpError) -> bool {
    !matches!(e, LpError::SolverFailure { .. } | LpError::NotOptimal(_))
}

fn sim_is_validation(e: &SimError) -> bool {
    match e {
        SimError::TooFewTrials { .. } | SimError::BadGrid | SimError::ZeroHorizon => true,
        SimError::Stability(s) => stability_is_validation(s),
        SimError::Market(m) => market_is_validation(m),
        _ => false,
    }
}

impl AppError {
    /// 1 for invalid input, 2 for failures while running.
    fn exit_code(&self) -> u8 {
        let validation = match self {
            AppError::Usage(_) => true,
            AppError::Io(e) => match e {
                IoError::Parse { .. } | IoError::Market { .. } | IoError::Config(_) => true,
                IoError::Read { .. } => true,
                IoError::Sim(s) => sim_is_validation(s),
                IoError::Stability(s) => stability_is_validation(s),
                IoError::Write { .. } | IoError::Json(_) => false,
            },
            AppError::Sim(e) => sim_is_validation(e),
            AppError::Stability(e) => stability_is_validation(e),
            AppError::Market(e) => market_is_validation(e),
            AppError::Lp(e) => lp_is_validation(e),
            AppError::Json(_) => false,
        };
        if validation {
            1
        } else {
            2
        }
    }
}

fn configure_threads() -> Result<(), AppError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        AppError::Usage(format!(
            "{THREADS_VAR} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AppError::Usage(format!("cannot size the worker pool: {e}")))?;
    info!("using {n} worker threads");
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value)?;
    // A closed pipe on stdout is not a failure of the command.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn with_horizon(market: Market, horizon: Option<usize>) -> Market {
    match horizon {
        Some(h) => market.with_horizon(h),
        None => market,
    }
}

#[derive(Serialize)]
struct SolveOutput {
    opt_d: f64,
    primal: Vec<f64>,
    prices: Vec<f64>,
    basis: Vec<String>,
    nonzero_counts: lp::NonzeroCounts,
    nondegenerate: bool,
    alternative_optima: bool,
    iterations: usize,
}

fn solve(path: &Path) -> Result<(), AppError> {
    let market = load_instance(path)?;
    let dlp = build_dlp(&market, &market.avg_capacity)?;
    let sol = lp::solve(&dlp)?;
    let counts = check_nondegenerate(&sol)?;
    let sf = to_standard_form(&dlp);
    print_json(&SolveOutput {
        opt_d: sol.objective_value,
        prices: sol.duals[..market.n_resources()].to_vec(),
        basis: sol.basis.iter().map(|&j| sf.column_label(j)).collect(),
        nondegenerate: counts.nondegenerate() && !sol.alternative_optima,
        nonzero_counts: counts,
        alternative_optima: sol.alternative_optima,
        iterations: sol.iterations,
        primal: sol.primal,
    })
}

#[derive(Serialize)]
struct StabilityOutput {
    #[serde(flatten)]
    report: fluidgate::stability::StabilityReport,
    horizon: usize,
    bound_degenerate: Option<f64>,
}

fn stability(path: &Path, limit: u128) -> Result<(), AppError> {
    let market = load_instance(path)?;
    let report = stability_report(&market, limit)?;
    let bound = if report.lambda_bar.is_some() && market.horizon >= 2 {
        Some(bound_degenerate(&market, market.horizon)?)
    } else {
        None
    };
    print_json(&StabilityOutput {
        report,
        horizon: market.horizon,
        bound_degenerate: bound,
    })
}

fn simulate(
    path: &Path,
    config: PolicyConfig,
    horizon: Option<usize>,
    trials: usize,
    seed: u64,
    trace: bool,
    out_dir: &Path,
) -> Result<(), AppError> {
    if trials == 0 {
        return Err(AppError::Usage("trials must be positive".into()));
    }
    let market = with_horizon(load_instance(path)?, horizon);
    let setup = SimSetup::new(&market)?;
    let h = market.horizon;
    let episodes = sim::run_episodes(&market, &setup, config, &[h], trials, seed)?;
    write_file(&out_dir.join("simulate.csv"), |w| {
        write_episodes_csv(w, &episodes)
    })?;
    if trace {
        let s = episode_seed(seed, h as u64, 0);
        let (_, records) = sim::run_episode_with(&market, &setup, config, s, 0, true)?;
        let records = records.unwrap_or_default();
        write_file(&out_dir.join("trace.csv"), |w| {
            write_trace_csv(w, &market, &records)
        })?;
    }
    if trials >= 2 {
        let report = sim::run_batch(&market, config, &[h], trials, seed)?;
        write_json(&out_dir.join("simulate_summary.json"), &report)?;
        print_json(&report)
    } else {
        print_json(&episodes[0])
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), AppError> {
    configure_threads()?;
    match command {
        Command::Solve { instance } => solve(&instance),
        Command::Stability { instance, limit } => stability(&instance, limit),
        Command::Simulate {
            instance,
            policy,
            horizon,
            trials,
            seed,
            trace,
            out_dir,
        } => simulate(
            &instance,
            policy.config(),
            horizon,
            trials,
            seed,
            trace,
            &out_dir,
        ),
        Command::Sweep {
            instance,
            policy,
            grid,
            trials,
            seed,
            out_dir,
        } => {
            let market = load_instance(&instance)?;
            let summary = io::sweep_summary(&market, policy.config(), &grid, trials, seed)?;
            write_file(&out_dir.join("sweep.csv"), |w| {
                write_episodes_csv(w, &summary.report.episodes)
            })?;
            write_file(&out_dir.join("sweep_points.csv"), |w| {
                io::write_points_csv(w, &summary.report)
            })?;
            write_json(&out_dir.join("sweep_summary.json"), &summary)?;
            print_json(&summary)
        }
        Command::Decompose {
            instance,
            policy,
            horizon,
            trials,
            seed,
            out_dir,
        } => {
            let market = load_instance(&instance)?;
            let h = horizon.unwrap_or(market.horizon);
            let report = sim::estimate_decomposition(&market, policy.config(), h, trials, seed)?;
            write_json(&out_dir.join("decompose.json"), &report)?;
            print_json(&report)
        }
        Command::Compare {
            instance,
            horizon,
            trials,
            seed,
            first,
            second,
            out_dir,
        } => {
            let market = load_instance(&instance)?;
            let h = horizon.unwrap_or(market.horizon);
            let report = sim::compare_policies(
                &market,
                PolicyConfig::new(first),
                PolicyConfig::new(second),
                h,
                trials,
                seed,
            )?;
            write_file(&out_dir.join("compare.csv"), |w| {
                write_paired_csv(w, &report)
            })?;
            write_json(&out_dir.join("compare_summary.json"), &report)?;
            print_json(&report)
        }
        Command::Figure1 {
            nondegenerate,
            degenerate,
            policy,
            grid,
            trials,
            seed,
            out_dir,
        } => {
            let cfg = ExperimentConfig {
                instances: vec![nondegenerate, degenerate],
                policy: policy.config(),
                grid,
                trials,
                base_seed: seed,
                out_dir,
            };
            let summary = io::run_figure1(&cfg)?;
            if summary.degenerate_slope_in_range == Some(false) {
                warn!("degenerate slope outside [0.35, 0.65]");
            }
            print_json(&summary)
        }
        Command::Figure2 {
            instance,
            horizon,
            trials,
            seed,
            first,
            second,
            out_dir,
        } => {
            let cfg = ExperimentConfig {
                instances: vec![instance],
                policy: PolicyConfig::new(first),
                grid: vec![horizon],
                trials,
                base_seed: seed,
                out_dir,
            };
            let summary = io::run_figure2_with(&cfg, PolicyConfig::new(second))?;
            if summary.report.underpowered {
                warn!("fewer than 100 trials: the summary is underpowered");
            }
            print_json(&summary)
        }
    }
}
