//! Instance files, CSV/JSON output and the two figure experiments.
//!
//! Instance schema:
//!
//! ```json
//! {"types": [{"mu": [..k], "c": [[..k], ..m rows]}, ..],
//!  "p": [..n], "b": [..m], "T": 1000, "k": 1, "allow_unnormalized": false}
//! ```
//!
//! CSV floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64`. Type indices in CSV files are 1-based.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Arm, Market, MarketError, OrderType};
use crate::policy::{PolicyConfig, PolicyKind};
use crate::sim::{
    compare_policies, run_batch, EpisodeResult, PairedReport, RegretReport, SimError, TraceRecord,
};
use crate::stability::{
    bound_nondegenerate, compute_lambda_bar, degenerate_bound_value, StabilityError,
    DEFAULT_ENUMERATION_LIMIT,
};

pub const EPISODE_HEADER: &str =
    "T,trial,seed,reward_to_tau,reward_to_T,regret_fluid,regret_hindsight,tau,tau_S";

pub const POINT_HEADER: &str = "T,trials,fluid_benchmark,mean_regret,sd_regret,se_regret,\
ci_low,ci_high,mean_regret_hindsight,se_regret_hindsight,mean_hindsight_value,mean_tau,mean_tau_S";

pub const PAIRED_HEADER: &str = "trial,seed,regret_first,regret_second,difference";

const EXAMPLE_NONDEGENERATE: &str = include_str!("../examples/paper_nondegenerate.json");
const EXAMPLE_DEGENERATE: &str = include_str!("../examples/paper_degenerate.json");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Market { path: PathBuf, source: MarketError },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeSpec {
    pub mu: Vec<f64>,
    /// `m x k`: row `i` holds the consumption of resource `i` by each arm.
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub types: Vec<TypeSpec>,
    pub p: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default)]
    pub allow_unnormalized: bool,
}

fn one() -> usize {
    1
}

impl Instance {
    pub fn to_market(&self) -> Result<Market, MarketError> {
        let mut types = Vec::with_capacity(self.types.len());
        for (j, t) in self.types.iter().enumerate() {
            if t.mu.len() != self.k || t.c.iter().any(|row| row.len() != self.k) {
                return Err(MarketError::Dimension(format!(
                    "type {} does not have k = {} arms",
                    j + 1,
                    self.k
                )));
            }
            if t.c.len() != self.b.len() {
                return Err(MarketError::Dimension(format!(
                    "type {} has {} consumption rows for {} resources",
                    j + 1,
                    t.c.len(),
                    self.b.len()
                )));
            }
            let arms = (0..self.k)
                .map(|l| Arm {
                    reward: t.mu[l],
                    consumption: t.c.iter().map(|row| row[l]).collect(),
                })
                .collect();
            types.push(OrderType { arms });
        }
        Market::new(
            types,
            self.p.clone(),
            self.b.clone(),
            self.horizon,
            self.allow_unnormalized,
        )
    }

    pub fn from_market(market: &Market) -> Self {
        Self {
            types: market
                .types
                .iter()
                .map(|t| TypeSpec {
                    mu: t.rewards(),
                    c: (0..market.n_resources())
                        .map(|i| t.arms.iter().map(|a| a.consumption[i]).collect())
                        .collect(),
                })
                .collect(),
            p: market.probabilities.clone(),
            b: market.avg_capacity.clone(),
            horizon: market.horizon,
            k: market.bundle_size,
            allow_unnormalized: market.allow_unnormalized,
        }
    }
}

pub fn parse_instance(text: &str, path: &Path) -> Result<Market, IoError> {
    let inst: Instance = serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    inst.to_market().map_err(|source| IoError::Market {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_instance(path: &Path) -> Result<Market, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_instance(&text, path)
}

pub fn instance_json(market: &Market) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(&Instance::from_market(
        market,
    ))?)
}

/// The three-type, two-resource example market with `b = (1, 1)`, or
/// `b = (1, 1.15)` when `degenerate`.
pub fn example_instance(degenerate: bool) -> Market {
    let (text, name) = if degenerate {
        (EXAMPLE_DEGENERATE, "paper_degenerate.json")
    } else {
        (EXAMPLE_NONDEGENERATE, "paper_nondegenerate.json")
    };
    parse_instance(text, Path::new(name)).expect("bundled instance is valid")
}

/// `f64` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn write_episodes_csv<W: Write>(mut w: W, episodes: &[EpisodeResult]) -> io::Result<()> {
    writeln!(w, "{EPISODE_HEADER}")?;
    for e in episodes {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            e.horizon,
            e.trial,
            e.seed,
            fmt_f64(e.reward_to_tau),
            fmt_f64(e.reward_to_t),
            fmt_f64(e.regret_fluid),
            fmt_f64(e.regret_hindsight),
            e.tau,
            fmt_opt(e.tau_s)
        )?;
    }
    Ok(())
}

pub fn write_points_csv<W: Write>(mut w: W, report: &RegretReport) -> io::Result<()> {
    writeln!(w, "{POINT_HEADER}")?;
    for p in &report.points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.horizon,
            p.trials,
            fmt_f64(p.fluid_benchmark),
            fmt_f64(p.regret_fluid.mean),
            fmt_f64(p.regret_fluid.sd),
            fmt_f64(p.regret_fluid.se),
            fmt_f64(p.regret_fluid.ci_low),
            fmt_f64(p.regret_fluid.ci_high),
            fmt_f64(p.regret_hindsight.mean),
            fmt_f64(p.regret_hindsight.se),
            fmt_f64(p.hindsight_value.mean),
            fmt_f64(p.mean_tau),
            fmt_opt(p.mean_tau_s.map(fmt_f64))
        )?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(
    mut w: W,
    market: &Market,
    trace: &[TraceRecord],
) -> io::Result<()> {
    let k = market.bundle_size;
    let m = market.n_resources();
    let mut header = vec!["t".to_string(), "type".to_string()];
    header.extend((1..=k).map(|l| format!("y_{l}")));
    header.extend((1..=k).map(|l| format!("x_{l}")));
    header.extend((1..=m).map(|i| format!("B_{i}")));
    header.extend((1..=m).map(|i| format!("b_{i}")));
    header.push("consumption_gap".into());
    header.push("lp_value".into());
    writeln!(w, "{}", header.join(","))?;
    for r in trace {
        let mut row = vec![r.t.to_string(), (r.arriving + 1).to_string()];
        row.extend(r.probabilities.iter().map(|&v| fmt_f64(v)));
        row.extend(r.allocation.iter().map(|&v| fmt_f64(v)));
        row.extend(r.remaining.iter().map(|&v| fmt_f64(v)));
        row.extend(r.average_remaining.iter().map(|&v| fmt_f64(v)));
        row.push(fmt_opt(r.consumption_gap.map(fmt_f64)));
        row.push(fmt_opt(r.lp_value.map(fmt_f64)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_paired_csv<W: Write>(mut w: W, report: &PairedReport) -> io::Result<()> {
    writeln!(w, "{PAIRED_HEADER}")?;
    for (i, seed) in report.seeds.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i,
            seed,
            fmt_f64(report.first_regrets[i]),
            fmt_f64(report.second_regrets[i]),
            fmt_f64(report.differences[i])
        )?;
    }
    Ok(())
}

/// Writes `contents` produced by `f` to `path`, creating parent directories.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut io::BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), IoError> {
    let wrap = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(wrap)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, |w| writeln!(w, "{text}"))
}

/// Settings shared by the experiment commands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// Instance files; `None` selects the bundled example.
    pub instances: Vec<Option<PathBuf>>,
    pub policy: PolicyConfig,
    pub grid: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn figure1_default(out_dir: PathBuf) -> Self {
        Self {
            instances: vec![None, None],
            policy: PolicyConfig::new(PolicyKind::AdaptiveUnknown),
            grid: vec![500, 1000, 2000, 4000, 8000],
            trials: 200,
            base_seed: 1,
            out_dir,
        }
    }

    pub fn figure2_default(out_dir: PathBuf) -> Self {
        Self {
            instances: vec![None],
            policy: PolicyConfig::new(PolicyKind::AdaptiveUnknown),
            grid: vec![1000],
            trials: 800,
            base_seed: 1,
            out_dir,
        }
    }

    fn validate(&self) -> Result<(), IoError> {
        if self.trials < 2 {
            return Err(IoError::Config(format!(
                "at least 2 trials are needed for confidence intervals, got {}",
                self.trials
            )));
        }
        if self.grid.is_empty() || self.grid[0] == 0 || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IoError::Config(
                "horizon grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

fn instance_at(cfg: &ExperimentConfig, idx: usize, degenerate: bool) -> Result<Market, IoError> {
    match cfg.instances.get(idx).cloned().flatten() {
        Some(p) => load_instance(&p),
        None => Ok(example_instance(degenerate)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub horizon: usize,
    pub mean_regret: f64,
    pub bound: f64,
    pub respected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub report: RegretReport,
    pub bounds: Vec<BoundCheck>,
    /// `mean(T_last) - 1.5 mean(T_ref)` against three times its standard
    /// error, with `T_ref = 1000` when on the grid (else the first point).
    pub bounded_regret: Option<BoundedRegretCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundedRegretCheck {
    pub reference_horizon: usize,
    pub last_horizon: usize,
    pub statistic: f64,
    pub standard_error: f64,
    pub holds: bool,
}

fn bounded_regret_check(report: &RegretReport) -> Option<BoundedRegretCheck> {
    if report.points.len() < 2 {
        return None;
    }
    let reference = report
        .points
        .iter()
        .find(|p| p.horizon == 1000)
        .unwrap_or(&report.points[0]);
    let last = report.points.last()?;
    let statistic = last.regret_fluid.mean - 1.5 * reference.regret_fluid.mean;
    let standard_error =
        (last.regret_fluid.se.powi(2) + 2.25 * reference.regret_fluid.se.powi(2)).sqrt();
    Some(BoundedRegretCheck {
        reference_horizon: reference.horizon,
        last_horizon: last.horizon,
        statistic,
        standard_error,
        holds: statistic <= 3.0 * standard_error,
    })
}

/// Sweeps `market` over the grid and evaluates the matching regret bound at
/// every horizon: the constant bound for nondegenerate markets, the
/// `sqrt(T log T)` one otherwise.
pub fn sweep_summary(
    market: &Market,
    policy: PolicyConfig,
    grid: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<SweepSummary, IoError> {
    let report = run_batch(market, policy, grid, trials, base_seed)?;
    let bounds = if report.degenerate {
        let lambda_bar = compute_lambda_bar(market, DEFAULT_ENUMERATION_LIMIT)?;
        report
            .points
            .iter()
            .map(|p| {
                let bound = degenerate_bound_value(
                    market.n_resources(),
                    market.n_types(),
                    market.min_probability(),
                    lambda_bar,
                    p.horizon,
                );
                BoundCheck {
                    horizon: p.horizon,
                    mean_regret: p.regret_fluid.mean,
                    bound,
                    respected: p.regret_fluid.mean <= bound,
                }
            })
            .collect()
    } else {
        let bound = bound_nondegenerate(market)?;
        report
            .points
            .iter()
            .map(|p| BoundCheck {
                horizon: p.horizon,
                mean_regret: p.regret_fluid.mean,
                bound,
                respected: p.regret_fluid.mean <= bound,
            })
            .collect()
    };
    let bounded_regret = (!report.degenerate)
        .then(|| bounded_regret_check(&report))
        .flatten();
    Ok(SweepSummary {
        report,
        bounds,
        bounded_regret,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure1Summary {
    pub config: ExperimentConfig,
    pub nondegenerate: SweepSummary,
    pub degenerate: SweepSummary,
    pub degenerate_slope_in_range: Option<bool>,
}

pub const FIGURE1_NONDEGENERATE_CSV: &str = "figure1_nondegenerate.csv";
pub const FIGURE1_DEGENERATE_CSV: &str = "figure1_degenerate.csv";
pub const FIGURE1_SUMMARY_JSON: &str = "figure1_summary.json";

/// Regret-versus-horizon sweeps of the nondegenerate and degenerate
/// instances (`instances[0]` and `instances[1]`).
pub fn run_figure1(cfg: &ExperimentConfig) -> Result<Figure1Summary, IoError> {
    cfg.validate()?;
    let nd = instance_at(cfg, 0, false)?;
    let dg = instance_at(cfg, 1, true)?;
    let nondegenerate = sweep_summary(&nd, cfg.policy, &cfg.grid, cfg.trials, cfg.base_seed)?;
    let degenerate = sweep_summary(&dg, cfg.policy, &cfg.grid, cfg.trials, cfg.base_seed)?;
    write_file(&cfg.out_dir.join(FIGURE1_NONDEGENERATE_CSV), |w| {
        write_points_csv(w, &nondegenerate.report)
    })?;
    write_file(&cfg.out_dir.join(FIGURE1_DEGENERATE_CSV), |w| {
        write_points_csv(w, &degenerate.report)
    })?;
    let summary = Figure1Summary {
        config: cfg.clone(),
        degenerate_slope_in_range: degenerate
            .report
            .slope
            .map(|s| (0.35..=0.65).contains(&s.slope)),
        nondegenerate,
        degenerate,
    };
    write_json(&cfg.out_dir.join(FIGURE1_SUMMARY_JSON), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure2Summary {
    pub config: ExperimentConfig,
    #[serde(flatten)]
    pub report: PairedReport,
}

pub const FIGURE2_CSV: &str = "figure2_paired.csv";
pub const FIGURE2_SUMMARY_JSON: &str = "figure2_summary.json";

/// Paired comparison of `cfg.policy` against the same policy with the true
/// distribution at horizon `grid[0]`.
pub fn run_figure2(cfg: &ExperimentConfig) -> Result<Figure2Summary, IoError> {
    run_figure2_with(
        cfg,
        PolicyConfig {
            kind: PolicyKind::AdaptiveKnown,
            ..cfg.policy
        },
    )
}

pub fn run_figure2_with(
    cfg: &ExperimentConfig,
    second: PolicyConfig,
) -> Result<Figure2Summary, IoError> {
    cfg.validate()?;
    let market = instance_at(cfg, 0, false)?;
    let report = compare_policies(
        &market,
        cfg.policy,
        second,
        cfg.grid[0],
        cfg.trials,
        cfg.base_seed,
    )?;
    write_file(&cfg.out_dir.join(FIGURE2_CSV), |w| {
        write_paired_csv(w, &report)
    })?;
    let summary = Figure2Summary {
        config: cfg.clone(),
        report,
    };
    write_json(&cfg.out_dir.join(FIGURE2_SUMMARY_JSON), &summary)?;
    Ok(summary)
}
