//! Online accept/reject rules.
//!
//! The adaptive policies re-solve an allocation LP every period at the
//! remaining average capacity `b_t = B_t / (T - t + 1)`: `AdaptiveUnknown`
//! weights types by their empirical frequencies among the first `t - 1`
//! arrivals, `AdaptiveKnown` by the true probabilities. The arriving order is
//! then accepted with the LP's probability for its type. `StaticFluid` uses
//! the fluid solution at the initial capacity throughout; `Greedy` accepts
//! whatever fits.

use clap::ValueEnum;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpError, FEASIBILITY_TOL};
use crate::market::{build_dlp, build_sampled_lp, CountState, Market, MarketError, SimRng};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("period {t} outside 1..={horizon}")]
    Period { t: usize, horizon: usize },
    #[error("remaining capacity {index} is negative ({value})")]
    NegativeRemaining { index: usize, value: f64 },
    #[error("count state has seen {seen} arrivals, expected {expected}")]
    Counts { seen: u64, expected: u64 },
    #[error("arriving type {index} is outside the support of {n} types")]
    UnknownType { index: usize, n: usize },
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AdaptiveUnknown,
    AdaptiveKnown,
    StaticFluid,
    Greedy,
}

impl PolicyKind {
    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::AdaptiveUnknown | Self::AdaptiveKnown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceMode {
    /// Accept an arm with the LP probability (one uniform draw per period).
    #[default]
    #[value(name = "binary")]
    RandomizedBinary,
    /// Accept the LP fraction deterministically.
    Partial,
}

/// What to do with a type never observed before, whose LP column is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum UnseenRule {
    /// Accept iff the best arm has a non-negative margin under the current
    /// sampled dual prices.
    #[default]
    DualPrice,
    AlwaysAccept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub acceptance: AcceptanceMode,
    pub unseen: UnseenRule,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            acceptance: AcceptanceMode::default(),
            unseen: UnseenRule::default(),
        }
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::new(PolicyKind::AdaptiveUnknown)
    }
}

/// State visible to the policy in period `t` (1-based), before the arriving
/// order is added to `counts`.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub t: usize,
    pub horizon: usize,
    pub remaining: &'a [f64],
    pub counts: &'a CountState,
    pub arriving: usize,
}

impl DecisionContext<'_> {
    /// `b_t = B_t / (T - t + 1)`.
    pub fn average_remaining(&self) -> Vec<f64> {
        let periods_left = (self.horizon - self.t + 1) as f64;
        self.remaining.iter().map(|b| b / periods_left).collect()
    }
}

/// Acceptance probabilities for the arriving type, over its arms.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub probabilities: Vec<f64>,
    /// Optimal value of the LP solved this period.
    pub lp_value: Option<f64>,
    /// `max_i |(sum_j w_j c_j y_j)_i - b_{t,i}|` at the LP solution.
    pub consumption_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Amount accepted of each arm; all zero on rejection.
    pub allocation: Vec<f64>,
    /// The arm accepted in binary mode.
    pub accepted_arm: Option<usize>,
    pub acceptance_probability: Vec<f64>,
    /// False when the selected allocation did not fit the remaining capacity
    /// and was forced to a rejection.
    pub feasible: bool,
    pub lp_value: Option<f64>,
    pub consumption_gap: Option<f64>,
}

impl Decision {
    pub fn reward(&self, market: &Market, j: usize) -> f64 {
        market.types[j]
            .arms
            .iter()
            .zip(&self.allocation)
            .map(|(a, x)| a.reward * x)
            .sum()
    }

    pub fn consumption(&self, market: &Market, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; market.n_resources()];
        for (arm, &x) in market.types[j].arms.iter().zip(&self.allocation) {
            if x != 0.0 {
                for (o, c) in out.iter_mut().zip(&arm.consumption) {
                    *o += c * x;
                }
            }
        }
        out
    }
}

/// Episode-local policy state: the market and, for `StaticFluid`, the fluid
/// solution solved once.
#[derive(Debug, Clone)]
pub struct Policy<'a> {
    market: &'a Market,
    config: PolicyConfig,
    fixed: Option<(Vec<f64>, f64)>,
}

impl<'a> Policy<'a> {
    pub fn new(market: &'a Market, config: PolicyConfig) -> Result<Self, PolicyError> {
        let fixed = if config.kind == PolicyKind::StaticFluid {
            let sol = lp::solve(&build_dlp(market, &market.avg_capacity)?)?;
            Some((sol.primal, sol.objective_value))
        } else {
            None
        };
        Ok(Self {
            market,
            config,
            fixed,
        })
    }

    pub fn config(&self) -> PolicyConfig {
        self.config
    }

    fn check(&self, ctx: &DecisionContext) -> Result<(), PolicyError> {
        if ctx.t == 0 || ctx.t > ctx.horizon {
            return Err(PolicyError::Period {
                t: ctx.t,
                horizon: ctx.horizon,
            });
        }
        if ctx.arriving >= self.market.n_types() {
            return Err(PolicyError::UnknownType {
                index: ctx.arriving,
                n: self.market.n_types(),
            });
        }
        if let Some((index, &value)) = ctx.remaining.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(PolicyError::NegativeRemaining { index, value });
        }
        if self.config.kind == PolicyKind::AdaptiveUnknown && ctx.counts.t != ctx.t as u64 - 1 {
            return Err(PolicyError::Counts {
                seen: ctx.counts.t,
                expected: ctx.t as u64 - 1,
            });
        }
        Ok(())
    }

    fn fits(&self, j: usize, arm: usize, remaining: &[f64]) -> bool {
        self.market.types[j].arms[arm]
            .consumption
            .iter()
            .zip(remaining)
            .all(|(c, r)| c <= r)
    }

    /// Highest-reward arm that fits, lowest index on ties.
    fn best_feasible_arm(&self, j: usize, remaining: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (l, arm) in self.market.types[j].arms.iter().enumerate() {
            if self.fits(j, l, remaining)
                && best.is_none_or(|b| arm.reward > self.market.types[j].arms[b].reward)
            {
                best = Some(l);
            }
        }
        best
    }

    fn point_mass(&self, arm: Option<usize>) -> Vec<f64> {
        let mut p = vec![0.0; self.market.bundle_size];
        if let Some(l) = arm {
            p[l] = 1.0;
        }
        p
    }

    /// The arriving type's slice of the LP solution. Does not touch any rng.
    pub fn acceptance_probabilities(&self, ctx: &DecisionContext) -> Result<Proposal, PolicyError> {
        self.check(ctx)?;
        let j = ctx.arriving;
        let k = self.market.bundle_size;
        let m = self.market.n_resources();
        let forced = |arm| Proposal {
            probabilities: self.point_mass(arm),
            lp_value: None,
            consumption_gap: None,
        };
        match self.config.kind {
            PolicyKind::Greedy => return Ok(forced(self.best_feasible_arm(j, ctx.remaining))),
            PolicyKind::StaticFluid => {
                let (y, value) = self.fixed.as_ref().expect("static solution is cached");
                return Ok(Proposal {
                    probabilities: clamp_slice(&y[j * k..(j + 1) * k]),
                    lp_value: Some(*value),
                    consumption_gap: None,
                });
            }
            _ if ctx.t == 1 => return Ok(forced(self.best_feasible_arm(j, ctx.remaining))),
            _ => {}
        }

        let b_t = ctx.average_remaining();
        let lp = match self.config.kind {
            PolicyKind::AdaptiveUnknown => build_sampled_lp(ctx.counts, self.market, &b_t)?,
            _ => build_dlp(self.market, &b_t)?,
        };
        let sol = lp::solve(&lp)?;
        let activity = lp.row_activity(&sol.primal);
        let gap = activity[..m]
            .iter()
            .zip(&b_t)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let unseen = self.config.kind == PolicyKind::AdaptiveUnknown && ctx.counts.counts[j] == 0;
        let probabilities = if unseen {
            let arm = match self.config.unseen {
                UnseenRule::AlwaysAccept => self.best_feasible_arm(j, ctx.remaining),
                UnseenRule::DualPrice => {
                    let margins = &self.market.arm_margins(&sol.duals[..m])[j];
                    let mut best = 0;
                    for (l, g) in margins.iter().enumerate() {
                        if *g > margins[best] {
                            best = l;
                        }
                    }
                    (margins[best] >= -FEASIBILITY_TOL).then_some(best)
                }
            };
            self.point_mass(arm)
        } else {
            clamp_slice(&sol.primal[j * k..(j + 1) * k])
        };
        Ok(Proposal {
            probabilities,
            lp_value: Some(sol.objective_value),
            consumption_gap: Some(gap),
        })
    }

    /// Picks the allocation for the arriving order. In binary mode exactly
    /// one uniform is drawn from `rng` per call; partial mode draws none.
    pub fn decide(&self, ctx: &DecisionContext, rng: &mut SimRng) -> Result<Decision, PolicyError> {
        let proposal = self.acceptance_probabilities(ctx)?;
        let j = ctx.arriving;
        let k = self.market.bundle_size;
        let mut allocation = vec![0.0; k];
        let mut accepted_arm = None;
        let feasible;
        match self.config.acceptance {
            AcceptanceMode::RandomizedBinary => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut chosen = None;
                for (l, p) in proposal.probabilities.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        chosen = Some(l);
                        break;
                    }
                }
                feasible = chosen.is_none_or(|l| self.fits(j, l, ctx.remaining));
                if let Some(l) = chosen.filter(|_| feasible) {
                    allocation[l] = 1.0;
                    accepted_arm = Some(l);
                }
            }
            AcceptanceMode::Partial => {
                let mut need = vec![0.0; self.market.n_resources()];
                for (arm, &y) in self.market.types[j]
                    .arms
                    .iter()
                    .zip(&proposal.probabilities)
                {
                    for (n, c) in need.iter_mut().zip(&arm.consumption) {
                        *n += c * y;
                    }
                }
                feasible = need.iter().zip(ctx.remaining).all(|(n, r)| n <= r);
                if feasible {
                    allocation.copy_from_slice(&proposal.probabilities);
                }
            }
        }
        Ok(Decision {
            allocation,
            accepted_arm,
            acceptance_probability: proposal.probabilities,
            feasible,
            lp_value: proposal.lp_value,
            consumption_gap: proposal.consumption_gap,
        })
    }
}

fn clamp_slice(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

pub fn acceptance_probabilities(
    config: PolicyConfig,
    market: &Market,
    ctx: &DecisionContext,
) -> Result<Proposal, PolicyError> {
    Policy::new(market, config)?.acceptance_probabilities(ctx)
}

pub fn decide(
    config: PolicyConfig,
    market: &Market,
    ctx: &DecisionContext,
    rng: &mut SimRng,
) -> Result<Decision, PolicyError> {
    Policy::new(market, config)?.decide(ctx, rng)
}
