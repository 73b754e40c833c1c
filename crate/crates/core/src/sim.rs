//! Episode simulation, Monte Carlo batches and regret statistics.
//!
//! Every episode is a pure function of `(market, policy, seed)`: arrivals come
//! from stream 0 of the seed and randomized decisions from stream 1. Batches
//! derive one seed per `(T, trial)` statelessly, run episodes on the rayon
//! pool and aggregate in index order, so results do not depend on the number
//! of worker threads.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lp::FEASIBILITY_TOL;
use crate::market::{
    arrival_rng, decision_rng, episode_seed, hindsight_value, sample_arrival, CountState, Market,
    MarketError,
};
use crate::policy::{DecisionContext, Policy, PolicyConfig, PolicyError, PolicyKind};
use crate::stability::{classify_fluid, radius_of, FluidSolution, StabilityError};

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.5758293035489004;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("at least {min} trials are needed, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("horizon grid must be non-empty, positive and strictly increasing")]
    BadGrid,
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("invariant violated at period {t} (seed {seed}): {detail}")]
    Invariant { t: usize, seed: u64, detail: String },
    #[error("slope fit needs at least two positive points, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// Per-market quantities shared by all episodes.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub fluid: FluidSolution,
    /// Depletion threshold: the largest consumption entry.
    pub theta: f64,
    /// Stability radius; `None` for degenerate markets, which disables the
    /// exit time from the stability box.
    pub radius: Option<f64>,
    binding: Vec<bool>,
}

impl SimSetup {
    pub fn new(market: &Market) -> Result<Self, SimError> {
        let fluid = FluidSolution::new(market)?;
        let radius = if fluid.is_nondegenerate() {
            Some(radius_of(&fluid)?)
        } else {
            None
        };
        let classes = classify_fluid(market, &fluid);
        let mut binding = vec![false; market.n_resources()];
        for &i in &classes.binding {
            binding[i] = true;
        }
        Ok(Self {
            theta: market.max_consumption(),
            radius,
            binding,
            fluid,
        })
    }

    pub fn opt_d(&self) -> f64 {
        self.fluid.value()
    }

    fn outside_box(&self, market: &Market, b_t: &[f64], radius: f64) -> bool {
        b_t.iter()
            .zip(&market.avg_capacity)
            .zip(&self.binding)
            .any(|((bt, b), &binding)| {
                let d = bt - b;
                if binding {
                    d.abs() > radius
                } else {
                    d < -radius
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub horizon: usize,
    pub trial: usize,
    pub seed: u64,
    /// Reward collected in periods `1..=tau`.
    pub reward_to_tau: f64,
    pub reward_to_t: f64,
    /// Last period before some remaining capacity falls to the threshold.
    pub tau: usize,
    /// First period whose average remaining capacity leaves the stability
    /// box, `T + 1` if none does, `None` when not tracked.
    pub tau_s: Option<usize>,
    /// Accepted amounts per arm (type-major), up to `tau` and up to `T`.
    pub accepted_to_tau: Vec<f64>,
    pub accepted_to_t: Vec<f64>,
    pub arrivals: Vec<u64>,
    /// Remaining capacity after `tau` periods and after all `T`.
    pub remaining_at_tau: Vec<f64>,
    pub final_remaining: Vec<f64>,
    pub hindsight_value: f64,
    /// `T * OPT_D - reward_to_tau`.
    pub regret_fluid: f64,
    /// `hindsight_value - reward_to_tau`.
    pub regret_hindsight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub arriving: usize,
    pub probabilities: Vec<f64>,
    pub allocation: Vec<f64>,
    /// `B_t`, before the decision.
    pub remaining: Vec<f64>,
    pub average_remaining: Vec<f64>,
    pub consumption_gap: Option<f64>,
    pub lp_value: Option<f64>,
}

pub fn run_episode(
    market: &Market,
    config: PolicyConfig,
    seed: u64,
    trace: bool,
) -> Result<(EpisodeResult, Option<Vec<TraceRecord>>), SimError> {
    let setup = SimSetup::new(market)?;
    run_episode_with(market, &setup, config, seed, 0, trace)
}

pub fn run_episode_with(
    market: &Market,
    setup: &SimSetup,
    config: PolicyConfig,
    seed: u64,
    trial: usize,
    trace: bool,
) -> Result<(EpisodeResult, Option<Vec<TraceRecord>>), SimError> {
    let horizon = market.horizon;
    if horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let n = market.n_types();
    let k = market.bundle_size;
    let policy = Policy::new(market, config)?;
    let mut arrivals_rng = arrival_rng(seed);
    let mut decisions_rng = decision_rng(seed);

    let mut remaining = market.total_capacity();
    let mut counts = CountState::new(n);
    let mut tau = None;
    let mut remaining_at_tau = None;
    let mut tau_s = None;
    let mut reward_to_tau = 0.0;
    let mut reward_to_t = 0.0;
    let mut accepted_to_tau = vec![0.0; n * k];
    let mut accepted_to_t = vec![0.0; n * k];
    let mut records = trace.then(|| Vec::with_capacity(horizon));

    for t in 1..=horizon {
        let j = sample_arrival(market, &mut arrivals_rng);
        if tau.is_none() && remaining.iter().any(|&b| b <= setup.theta) {
            tau = Some(t - 1);
            remaining_at_tau = Some(remaining.clone());
        }
        let ctx = DecisionContext {
            t,
            horizon,
            remaining: &remaining,
            counts: &counts,
            arriving: j,
        };
        let b_t = ctx.average_remaining();
        if let (None, Some(r)) = (tau_s, setup.radius) {
            if setup.outside_box(market, &b_t, r) {
                tau_s = Some(t);
            }
        }
        let decision = policy.decide(&ctx, &mut decisions_rng)?;
        let reward = decision.reward(market, j);
        let used = decision.consumption(market, j);
        if let Some(rec) = records.as_mut() {
            rec.push(TraceRecord {
                t,
                arriving: j,
                probabilities: decision.acceptance_probability.clone(),
                allocation: decision.allocation.clone(),
                remaining: remaining.clone(),
                average_remaining: b_t,
                consumption_gap: decision.consumption_gap,
                lp_value: decision.lp_value,
            });
        }
        for (i, (b, u)) in remaining.iter_mut().zip(&used).enumerate() {
            *b -= u;
            if *b < 0.0 {
                return Err(SimError::Invariant {
                    t,
                    seed,
                    detail: format!("remaining capacity {} became {}", i + 1, *b),
                });
            }
        }
        reward_to_t += reward;
        for (a, x) in accepted_to_t[j * k..(j + 1) * k]
            .iter_mut()
            .zip(&decision.allocation)
        {
            *a += x;
        }
        if tau.is_none() {
            reward_to_tau += reward;
            for (a, x) in accepted_to_tau[j * k..(j + 1) * k]
                .iter_mut()
                .zip(&decision.allocation)
            {
                *a += x;
            }
        }
        counts.observe(j);
    }

    let hindsight = hindsight_value(&counts.counts, market)?;
    let tau_s = setup.radius.map(|_| tau_s.unwrap_or(horizon + 1));
    let result = EpisodeResult {
        horizon,
        trial,
        seed,
        reward_to_tau,
        reward_to_t,
        tau: tau.unwrap_or(horizon),
        tau_s,
        accepted_to_tau,
        accepted_to_t,
        arrivals: counts.counts,
        remaining_at_tau: remaining_at_tau.unwrap_or_else(|| remaining.clone()),
        final_remaining: remaining,
        hindsight_value: hindsight,
        regret_fluid: horizon as f64 * setup.opt_d() - reward_to_tau,
        regret_hindsight: hindsight - reward_to_tau,
    };
    Ok((result, records))
}

/// Sample mean, standard deviation, standard error and normal 99% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            f64::NAN
        };
        let se = sd / (n as f64).sqrt();
        Self {
            n,
            mean,
            sd,
            se,
            ci_low: mean - Z_99 * se,
            ci_high: mean + Z_99 * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchPoint {
    pub horizon: usize,
    pub trials: usize,
    pub fluid_benchmark: f64,
    pub regret_fluid: Summary,
    pub regret_hindsight: Summary,
    pub hindsight_value: Summary,
    pub reward_to_tau: Summary,
    pub mean_tau: f64,
    pub mean_tau_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals in log space.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub policy: PolicyConfig,
    pub opt_d: f64,
    pub degenerate: bool,
    pub base_seed: u64,
    pub points: Vec<BatchPoint>,
    /// Fit of log mean fluid regret on log T; needs three grid points.
    pub slope: Option<SlopeFit>,
    /// Every episode, ordered by horizon then trial.
    #[serde(skip)]
    pub episodes: Vec<EpisodeResult>,
}

fn check_grid(grid: &[usize]) -> Result<(), SimError> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::BadGrid);
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<(), SimError> {
    if trials < 2 {
        return Err(SimError::TooFewTrials {
            min: 2,
            got: trials,
        });
    }
    Ok(())
}

/// Runs `trials` episodes at every horizon of `grid` in parallel; results are
/// in `(grid index, trial)` order.
pub fn run_episodes(
    market: &Market,
    setup: &SimSetup,
    config: PolicyConfig,
    grid: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<Vec<EpisodeResult>, SimError> {
    let markets: Vec<Market> = grid.iter().map(|&h| market.with_horizon(h)).collect();
    (0..grid.len() * trials)
        .into_par_iter()
        .map(|idx| {
            let (g, trial) = (idx / trials, idx % trials);
            let seed = episode_seed(base_seed, grid[g] as u64, trial as u64);
            run_episode_with(&markets[g], setup, config, seed, trial, false).map(|(r, _)| r)
        })
        .collect()
}

pub fn run_batch(
    market: &Market,
    config: PolicyConfig,
    grid: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<RegretReport, SimError> {
    check_grid(grid)?;
    check_trials(trials)?;
    let setup = SimSetup::new(market)?;
    let episodes = run_episodes(market, &setup, config, grid, trials, base_seed)?;
    let opt_d = setup.opt_d();
    let points: Vec<BatchPoint> = grid
        .iter()
        .zip(episodes.chunks(trials))
        .map(|(&h, eps)| {
            let col = |f: fn(&EpisodeResult) -> f64| eps.iter().map(f).collect::<Vec<_>>();
            let tau_s: Vec<f64> = eps
                .iter()
                .filter_map(|e| e.tau_s.map(|v| v as f64))
                .collect();
            BatchPoint {
                horizon: h,
                trials,
                fluid_benchmark: h as f64 * opt_d,
                regret_fluid: Summary::of(&col(|e| e.regret_fluid)),
                regret_hindsight: Summary::of(&col(|e| e.regret_hindsight)),
                hindsight_value: Summary::of(&col(|e| e.hindsight_value)),
                reward_to_tau: Summary::of(&col(|e| e.reward_to_tau)),
                mean_tau: col(|e| e.tau as f64).iter().sum::<f64>() / trials as f64,
                mean_tau_s: (!tau_s.is_empty())
                    .then(|| tau_s.iter().sum::<f64>() / tau_s.len() as f64),
            }
        })
        .collect();
    let slope = if points.len() >= 3 {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.horizon as f64, p.regret_fluid.mean))
            .collect();
        fit_loglog_slope(&pts).ok()
    } else {
        None
    };
    Ok(RegretReport {
        policy: config,
        opt_d,
        degenerate: !setup.fluid.is_nondegenerate(),
        base_seed,
        points,
        slope,
        episodes,
    })
}

/// Least squares of `log y` on `log x`. Points with non-positive `y` are
/// dropped with a warning.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit, SimError> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if kept.len() < points.len() {
        warn!(
            "dropped {} non-positive points from the log-log fit",
            points.len() - kept.len()
        );
    }
    if kept.len() < 2 {
        return Err(SimError::TooFewPoints(kept.len()));
    }
    let n = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = kept
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
        points: kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub horizon: usize,
    pub trials: usize,
    pub prices: Vec<f64>,
    /// Margin loss on profitable types that were not accepted before `tau`.
    pub term_basic: Summary,
    /// Loss from accepting unprofitable types before `tau`.
    pub term_rejected: Summary,
    /// Value of the capacity left at `tau`.
    pub term_leftover: Summary,
    pub total_lhs: Summary,
    pub total_rhs: Summary,
    /// Per-trial `lhs - rhs`; its mean is zero in expectation.
    pub difference: Summary,
    pub within_three_se: bool,
}

/// Monte Carlo estimate of the three-term decomposition of fluid regret. Per
/// arm `(j, l)` with margin `g_jl = mu_jl - c_jl^T lambda*` and
/// `g_j = max(0, max_l g_jl)`:
///
/// ```text
/// basic    = sum_{g_j >= 0} g_j (n_j(T) - n^a_j(tau)) + sum_l (g_j - g_jl) n^a_jl(tau)
/// rejected = sum_{g_j < 0} sum_l (-g_jl) n^a_jl(tau)
/// leftover = lambda*^T B_tau
/// ```
pub fn estimate_decomposition(
    market: &Market,
    config: PolicyConfig,
    horizon: usize,
    trials: usize,
    base_seed: u64,
) -> Result<DecompositionReport, SimError> {
    check_trials(trials)?;
    let market = market.with_horizon(horizon);
    let setup = SimSetup::new(&market)?;
    setup.fluid.require_nondegenerate()?;
    let prices = setup.fluid.prices().to_vec();
    let k = market.bundle_size;
    let snap = |g: f64| if g.abs() <= FEASIBILITY_TOL { 0.0 } else { g };
    let margins: Vec<Vec<f64>> = market
        .arm_margins(&prices)
        .into_iter()
        .map(|arms| arms.into_iter().map(snap).collect())
        .collect();
    let best: Vec<f64> = margins
        .iter()
        .map(|a| a.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();

    let episodes = run_episodes(&market, &setup, config, &[horizon], trials, base_seed)?;
    let mut basic = Vec::with_capacity(trials);
    let mut rejected = Vec::with_capacity(trials);
    let mut leftover = Vec::with_capacity(trials);
    let mut lhs = Vec::with_capacity(trials);
    let mut rhs = Vec::with_capacity(trials);
    let mut diff = Vec::with_capacity(trials);
    for e in &episodes {
        let (mut b, mut r) = (0.0, 0.0);
        for (j, arms) in margins.iter().enumerate() {
            let acc = &e.accepted_to_tau[j * k..(j + 1) * k];
            if best[j] >= 0.0 {
                let taken: f64 = acc.iter().sum();
                b += best[j] * (e.arrivals[j] as f64 - taken);
                b += arms
                    .iter()
                    .zip(acc)
                    .map(|(g, a)| (best[j] - g) * a)
                    .sum::<f64>();
            } else {
                r += arms.iter().zip(acc).map(|(g, a)| -g * a).sum::<f64>();
            }
        }
        let l: f64 = prices
            .iter()
            .zip(&e.remaining_at_tau)
            .map(|(p, b)| p * b)
            .sum();
        basic.push(b);
        rejected.push(r);
        leftover.push(l);
        lhs.push(e.regret_fluid);
        rhs.push(b + r + l);
        diff.push(e.regret_fluid - (b + r + l));
    }
    let difference = Summary::of(&diff);
    Ok(DecompositionReport {
        horizon,
        trials,
        prices,
        term_basic: Summary::of(&basic),
        term_rejected: Summary::of(&rejected),
        term_leftover: Summary::of(&leftover),
        total_lhs: Summary::of(&lhs),
        total_rhs: Summary::of(&rhs),
        within_three_se: difference.mean.abs() <= 3.0 * difference.se
            || difference.mean.abs() <= 1e-9,
        difference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub horizon: usize,
    pub trials: usize,
    pub first: PolicyConfig,
    pub second: PolicyConfig,
    /// Per-trial `regret(first) - regret(second)` on shared seeds.
    pub differences: Vec<f64>,
    pub first_regrets: Vec<f64>,
    pub second_regrets: Vec<f64>,
    pub seeds: Vec<u64>,
    pub regret_first: Summary,
    pub regret_second: Summary,
    pub difference: Summary,
    /// `|mean| <= 3 SE`.
    pub parity: bool,
    /// `|mean| <= 0.2 sd`.
    pub symmetric: bool,
    /// Fewer than 100 trials.
    pub underpowered: bool,
    /// False for degenerate markets, where no parity is expected.
    pub claim_applies: bool,
}

pub fn compare_policies(
    market: &Market,
    first: PolicyConfig,
    second: PolicyConfig,
    horizon: usize,
    trials: usize,
    base_seed: u64,
) -> Result<PairedReport, SimError> {
    check_trials(trials)?;
    let market = market.with_horizon(horizon);
    let setup = SimSetup::new(&market)?;
    let a = run_episodes(&market, &setup, first, &[horizon], trials, base_seed)?;
    let b = run_episodes(&market, &setup, second, &[horizon], trials, base_seed)?;
    let ra: Vec<f64> = a.iter().map(|e| e.regret_fluid).collect();
    let rb: Vec<f64> = b.iter().map(|e| e.regret_fluid).collect();
    let differences: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
    let difference = Summary::of(&differences);
    let claim_applies = setup.fluid.is_nondegenerate();
    if !claim_applies {
        warn!("degenerate market: the paired comparison carries no parity claim");
    }
    Ok(PairedReport {
        horizon,
        trials,
        first,
        second,
        seeds: a.iter().map(|e| e.seed).collect(),
        regret_first: Summary::of(&ra),
        regret_second: Summary::of(&rb),
        parity: difference.mean.abs() <= 3.0 * difference.se || difference.mean == 0.0,
        symmetric: difference.mean.abs() <= 0.2 * difference.sd || difference.mean == 0.0,
        underpowered: trials < 100,
        claim_applies,
        differences,
        first_regrets: ra,
        second_regrets: rb,
        difference,
    })
}

/// Paired unknown-minus-known distribution comparison.
pub fn compare_known_unknown(
    market: &Market,
    horizon: usize,
    trials: usize,
    base_seed: u64,
) -> Result<PairedReport, SimError> {
    compare_policies(
        market,
        PolicyConfig::new(PolicyKind::AdaptiveUnknown),
        PolicyConfig::new(PolicyKind::AdaptiveKnown),
        horizon,
        trials,
        base_seed,
    )
}
