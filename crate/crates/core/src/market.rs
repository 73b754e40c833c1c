//! The stochastic arrival model and the LPs built from it.
//!
//! A [`Market`] is a finite support of order types, each a bundle of `k` arms
//! `(reward, consumption)`, together with arrival probabilities `p`, the
//! per-period capacity `b` and the horizon `T`. With `k = 1` every order is a
//! single accept/reject decision; with `k > 1` at most one arm of the bundle
//! may be accepted.
//!
//! Variables of every LP built here are laid out type-major: arm `l` of type
//! `j` is variable `j * k + l`. Bundles add one row `sum_l y_{j,l} <= 1` per
//! type after the `m` resource rows.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::lp::{self, DenseLp, LpError};

/// Probabilities must sum to one within this.
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid market: {0}")]
    Invalid(ValidationReport),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("capacity entry {index} is negative ({value})")]
    NegativeCapacity { index: usize, value: f64 },
    #[error("the sampled LP needs at least one observed arrival")]
    NoObservations,
    #[error("arrival index {index} is outside the support of {n} types")]
    UnknownType { index: usize, n: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arm {
    pub reward: f64,
    /// Length `m`.
    pub consumption: Vec<f64>,
}

/// One atom of the support: `k` arms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderType {
    pub arms: Vec<Arm>,
}

impl OrderType {
    pub fn single(reward: f64, consumption: Vec<f64>) -> Self {
        Self {
            arms: vec![Arm {
                reward,
                consumption,
            }],
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Market {
    pub types: Vec<OrderType>,
    pub probabilities: Vec<f64>,
    /// `b`, length `m`.
    pub avg_capacity: Vec<f64>,
    pub horizon: usize,
    pub bundle_size: usize,
    /// Accept reward/consumption entries above one.
    pub allow_unnormalized: bool,
}

impl Market {
    /// Builds a market and rejects it if validation finds a violation that
    /// `allow_unnormalized` does not waive.
    pub fn new(
        types: Vec<OrderType>,
        probabilities: Vec<f64>,
        avg_capacity: Vec<f64>,
        horizon: usize,
        allow_unnormalized: bool,
    ) -> Result<Self, MarketError> {
        let bundle_size = types.first().map_or(1, |t| t.arms.len());
        let market = Self {
            types,
            probabilities,
            avg_capacity,
            horizon,
            bundle_size,
            allow_unnormalized,
        };
        let report = validate(&market);
        if !report.blocking(allow_unnormalized).is_empty() {
            return Err(MarketError::Invalid(report));
        }
        Ok(market)
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn n_resources(&self) -> usize {
        self.avg_capacity.len()
    }

    /// `B = T b`.
    pub fn total_capacity(&self) -> Vec<f64> {
        self.avg_capacity
            .iter()
            .map(|b| b * self.horizon as f64)
            .collect()
    }

    /// Largest single consumption entry over all arms.
    pub fn max_consumption(&self) -> f64 {
        self.types
            .iter()
            .flat_map(|t| &t.arms)
            .flat_map(|a| &a.consumption)
            .fold(0.0, |acc: f64, &c| acc.max(c))
    }

    pub fn min_probability(&self) -> f64 {
        self.probabilities
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self {
            horizon,
            ..self.clone()
        }
    }

    pub fn with_capacity(&self, avg_capacity: Vec<f64>) -> Self {
        Self {
            avg_capacity,
            ..self.clone()
        }
    }

    /// `mu_l - c_l^T lambda` for every arm, type-major.
    pub fn arm_margins(&self, prices: &[f64]) -> Vec<Vec<f64>> {
        self.types
            .iter()
            .map(|t| {
                t.arms
                    .iter()
                    .map(|a| a.reward - lp::dot(&a.consumption, prices))
                    .collect()
            })
            .collect()
    }
}

/// Which modelling assumption a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    /// Arrivals follow a distribution on the probability simplex.
    Distribution,
    /// Rewards and consumptions are non-negative and at most one.
    Boundedness,
    /// Capacity grows linearly with a positive rate.
    Capacity,
    Structure,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::Distribution => "distribution (simplex)",
            Clause::Boundedness => "positiveness/boundedness",
            Clause::Capacity => "linear capacity growth",
            Clause::Structure => "structure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptySupport,
    Shape {
        detail: String,
    },
    NonFinite {
        detail: String,
    },
    ProbabilityNotPositive {
        type_index: usize,
        value: f64,
    },
    ProbabilitySum {
        sum: f64,
    },
    NegativeEntry {
        detail: String,
        value: f64,
    },
    /// Waivable with `allow_unnormalized`.
    EntryAboveOne {
        detail: String,
        value: f64,
    },
    CapacityNotPositive {
        resource: usize,
        value: f64,
    },
    ZeroHorizon,
}

impl Violation {
    pub fn clause(&self) -> Clause {
        match self {
            Violation::EmptySupport | Violation::Shape { .. } | Violation::NonFinite { .. } => {
                Clause::Structure
            }
            Violation::ProbabilityNotPositive { .. } | Violation::ProbabilitySum { .. } => {
                Clause::Distribution
            }
            Violation::NegativeEntry { .. } | Violation::EntryAboveOne { .. } => {
                Clause::Boundedness
            }
            Violation::CapacityNotPositive { .. } | Violation::ZeroHorizon => Clause::Capacity,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.clause())?;
        match self {
            Violation::EmptySupport => write!(f, "no order types"),
            Violation::Shape { detail } | Violation::NonFinite { detail } => f.write_str(detail),
            Violation::ProbabilityNotPositive { type_index, value } => {
                write!(f, "p[{}] = {value} is not positive", type_index + 1)
            }
            Violation::ProbabilitySum { sum } => write!(f, "probabilities sum to {sum}, not 1"),
            Violation::NegativeEntry { detail, value } => write!(f, "{detail} = {value} < 0"),
            Violation::EntryAboveOne { detail, value } => write!(f, "{detail} = {value} > 1"),
            Violation::CapacityNotPositive { resource, value } => {
                write!(f, "b[{}] = {value} is not positive", resource + 1)
            }
            Violation::ZeroHorizon => write!(f, "horizon T must be positive"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations that remain after applying the normalization waiver.
    pub fn blocking(&self, allow_unnormalized: bool) -> Vec<&Violation> {
        self.violations
            .iter()
            .filter(|v| !(allow_unnormalized && matches!(v, Violation::EntryAboveOne { .. })))
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Lists every violated modelling clause. Entries above one are reported even
/// when the market allows them; see [`ValidationReport::blocking`].
pub fn validate(market: &Market) -> ValidationReport {
    let mut v = Vec::new();
    let n = market.n_types();
    let m = market.n_resources();
    let k = market.bundle_size;
    if n == 0 {
        v.push(Violation::EmptySupport);
    }
    if market.probabilities.len() != n {
        v.push(Violation::Shape {
            detail: format!("{} probabilities for {n} types", market.probabilities.len()),
        });
    }
    if m == 0 {
        v.push(Violation::Shape {
            detail: "no resources".into(),
        });
    }
    if k == 0 {
        v.push(Violation::Shape {
            detail: "bundle size must be positive".into(),
        });
    }
    if market.horizon == 0 {
        v.push(Violation::ZeroHorizon);
    }

    for (j, p) in market.probabilities.iter().enumerate() {
        if !p.is_finite() {
            v.push(Violation::NonFinite {
                detail: format!("p[{}]", j + 1),
            });
        } else if *p <= 0.0 {
            v.push(Violation::ProbabilityNotPositive {
                type_index: j,
                value: *p,
            });
        }
    }
    let sum: f64 = market.probabilities.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        v.push(Violation::ProbabilitySum { sum });
    }

    for (j, t) in market.types.iter().enumerate() {
        if t.arms.len() != k {
            v.push(Violation::Shape {
                detail: format!(
                    "type {} has {} arms, bundle size is {k}",
                    j + 1,
                    t.arms.len()
                ),
            });
        }
        for (l, arm) in t.arms.iter().enumerate() {
            let label = |what: &str| {
                if k == 1 {
                    format!("{what} of type {}", j + 1)
                } else {
                    format!("{what} of type {} arm {}", j + 1, l + 1)
                }
            };
            check_entry(&mut v, label("reward"), arm.reward);
            if arm.consumption.len() != m {
                v.push(Violation::Shape {
                    detail: format!(
                        "{} has {} entries for {m} resources",
                        label("consumption"),
                        arm.consumption.len()
                    ),
                });
            }
            for (i, &c) in arm.consumption.iter().enumerate() {
                check_entry(&mut v, format!("{}[{}]", label("consumption"), i + 1), c);
            }
        }
    }

    for (i, &b) in market.avg_capacity.iter().enumerate() {
        if !b.is_finite() {
            v.push(Violation::NonFinite {
                detail: format!("b[{}]", i + 1),
            });
        } else if b <= 0.0 {
            v.push(Violation::CapacityNotPositive {
                resource: i,
                value: b,
            });
        }
    }
    ValidationReport { violations: v }
}

fn check_entry(v: &mut Vec<Violation>, detail: String, value: f64) {
    if !value.is_finite() {
        v.push(Violation::NonFinite { detail });
    } else if value < 0.0 {
        v.push(Violation::NegativeEntry { detail, value });
    } else if value > 1.0 {
        v.push(Violation::EntryAboveOne { detail, value });
    }
}

/// Arrival counts `n_j` after `t` observed periods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountState {
    pub counts: Vec<u64>,
    pub t: u64,
}

impl CountState {
    pub fn new(n_types: usize) -> Self {
        Self {
            counts: vec![0; n_types],
            t: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let t = counts.iter().sum();
        Self { counts, t }
    }

    pub fn observe(&mut self, j: usize) {
        self.counts[j] += 1;
        self.t += 1;
    }

    /// Empirical frequencies `n_j / t`.
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.t as f64)
            .collect()
    }
}

/// A realised arrival stream; indices are 0-based into `Market::types`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RealizedSequence {
    pub type_indices: Vec<usize>,
    pub seed: u64,
}

impl RealizedSequence {
    /// Draws `market.horizon` arrivals from the arrival stream of `seed`.
    pub fn generate(market: &Market, seed: u64) -> Self {
        let mut rng = arrival_rng(seed);
        let type_indices = (0..market.horizon)
            .map(|_| sample_arrival(market, &mut rng))
            .collect();
        Self { type_indices, seed }
    }

    pub fn counts(&self, n_types: usize) -> CountState {
        let mut c = CountState::new(n_types);
        for &j in &self.type_indices {
            c.observe(j);
        }
        c
    }
}

pub type SimRng = ChaCha8Rng;

/// Derives the seed of one episode from the batch seed and its coordinates.
/// Stateless, so the mapping does not depend on execution order.
pub fn episode_seed(base_seed: u64, horizon: u64, trial: u64) -> u64 {
    let mut h = splitmix64(base_seed);
    h = splitmix64(h ^ horizon);
    splitmix64(h ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream 0 of the episode seed drives arrivals.
pub fn arrival_rng(seed: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// ChaCha8 stream 1 of the episode seed drives randomized decisions, so two
/// policies run on the same seed see the same arrivals.
pub fn decision_rng(seed: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Inverse-CDF draw over the cumulative probabilities in type order.
pub fn sample_arrival<R: Rng + ?Sized>(market: &Market, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (j, p) in market.probabilities.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    market.probabilities.len() - 1
}

/// The allocation LP with type weights `w_j` and right-hand side `rhs`:
/// objective `w_j mu_{j,l}`, columns `w_j c_{j,l}`, every variable in `[0, 1]`
/// and, for bundles, one `sum_l y_{j,l} <= 1` row per type.
pub fn weighted_lp(market: &Market, weights: &[f64], rhs: &[f64]) -> Result<DenseLp, MarketError> {
    let n = market.n_types();
    let m = market.n_resources();
    let k = market.bundle_size;
    if weights.len() != n {
        return Err(MarketError::Dimension(format!(
            "{} weights for {n} types",
            weights.len()
        )));
    }
    check_rhs(rhs, m)?;
    let nv = n * k;
    let mut objective = Vec::with_capacity(nv);
    let mut matrix = vec![Vec::with_capacity(nv); m];
    for (t, &w) in market.types.iter().zip(weights) {
        for arm in &t.arms {
            objective.push(w * arm.reward);
            for (row, c) in matrix.iter_mut().zip(&arm.consumption) {
                row.push(w * c);
            }
        }
    }
    let mut rhs = rhs.to_vec();
    if k > 1 {
        for j in 0..n {
            let mut row = vec![0.0; nv];
            row[j * k..(j + 1) * k].fill(1.0);
            matrix.push(row);
            rhs.push(1.0);
        }
    }
    Ok(DenseLp::new(objective, matrix, rhs, vec![1.0; nv])?)
}

fn check_rhs(rhs: &[f64], m: usize) -> Result<(), MarketError> {
    if rhs.len() != m {
        return Err(MarketError::Dimension(format!(
            "rhs has {} entries for {m} resources",
            rhs.len()
        )));
    }
    if let Some((index, &value)) = rhs.iter().enumerate().find(|(_, b)| **b < 0.0) {
        return Err(MarketError::NegativeCapacity { index, value });
    }
    Ok(())
}

/// The deterministic (fluid) LP at right-hand side `rhs`.
pub fn build_dlp(market: &Market, rhs: &[f64]) -> Result<DenseLp, MarketError> {
    weighted_lp(market, &market.probabilities, rhs)
}

/// The LP re-solved in period `state.t + 1`: empirical frequencies replace
/// `p` and the remaining average capacity `b_t` replaces `b`.
pub fn build_sampled_lp(
    state: &CountState,
    market: &Market,
    b_t: &[f64],
) -> Result<DenseLp, MarketError> {
    if state.t == 0 {
        return Err(MarketError::NoObservations);
    }
    weighted_lp(market, &state.frequencies(), b_t)
}

/// The offline LP over a realised sequence: one variable per period (per arm
/// for bundles), capacity `T b`.
pub fn build_hindsight_lp(seq: &RealizedSequence, market: &Market) -> Result<DenseLp, MarketError> {
    let horizon = seq.type_indices.len();
    let n = market.n_types();
    let k = market.bundle_size;
    let m = market.n_resources();
    if let Some(&index) = seq.type_indices.iter().find(|&&j| j >= n) {
        return Err(MarketError::UnknownType { index, n });
    }
    let nv = horizon * k;
    let mut objective = Vec::with_capacity(nv);
    let mut matrix = vec![Vec::with_capacity(nv); m];
    for &j in &seq.type_indices {
        for arm in &market.types[j].arms {
            objective.push(arm.reward);
            for (row, &c) in matrix.iter_mut().zip(&arm.consumption) {
                row.push(c);
            }
        }
    }
    let mut rhs: Vec<f64> = market
        .avg_capacity
        .iter()
        .map(|b| b * horizon as f64)
        .collect();
    if k > 1 {
        for t in 0..horizon {
            let mut row = vec![0.0; nv];
            row[t * k..(t + 1) * k].fill(1.0);
            matrix.push(row);
            rhs.push(1.0);
        }
    }
    Ok(DenseLp::new(objective, matrix, rhs, vec![1.0; nv])?)
}

/// Value of the offline LP computed from arrival counts alone. Orders of the
/// same type are interchangeable, so the per-period LP collapses to one
/// variable per arm bounded by the type's count.
pub fn hindsight_value(counts: &[u64], market: &Market) -> Result<f64, MarketError> {
    let n = market.n_types();
    let k = market.bundle_size;
    if counts.len() != n {
        return Err(MarketError::Dimension(format!(
            "{} counts for {n} types",
            counts.len()
        )));
    }
    let horizon: u64 = counts.iter().sum();
    let mut lp = weighted_lp(
        market,
        &vec![1.0; n],
        &market
            .avg_capacity
            .iter()
            .map(|b| b * horizon as f64)
            .collect::<Vec<_>>(),
    )?;
    for (j, &c) in counts.iter().enumerate() {
        let c = c as f64;
        lp.upper_bounds[j * k..(j + 1) * k].fill(c);
        if k > 1 {
            let row = market.n_resources() + j;
            lp.rhs[row] = c;
        }
    }
    Ok(lp::solve(&lp)?.objective_value)
}
