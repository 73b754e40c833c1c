//! Structural constants of the fluid LP and the basis-stability harness.
//!
//! For a nondegenerate optimum the standard-form basis is unique, and any
//! perturbation of the LP data within the radius `L` computed here keeps both
//! the optimal basis and the set of binding resources. The radius is built
//! from three quantities of the standard form:
//!
//! * `chi`: the smallest positive basic value,
//! * `sigma`: the smallest singular value of the basis matrix,
//! * `delta`: the smallest positive reduced cost of a non-basic column,
//!
//! combined as
//!
//! ```text
//! L = min{ min(1, s, s^2) min(chi, delta) / (12 n^2 sqrt(n+m)),
//!          s delta / (12 sqrt(n (n+m))),
//!          delta / 6,
//!          s chi / (8 sqrt(n+m)) }
//! ```
//!
//! with `s = sigma`, `n` LP variables and `m` LP rows (order types and
//! resources for scalar markets).

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::lp::{
    self, check_nondegenerate, enumerate_dual_bfs, to_standard_form, DenseLp, LpError, LpSolution,
    NonzeroCounts, FEASIBILITY_TOL, ZERO_TOL,
};
use crate::market::{build_dlp, Market, MarketError};

/// Default cap on basis candidates for dual enumeration.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 2_000_000;

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("fluid LP is degenerate ({} nonzeros, basis size {})", .0.total(), .0.required)]
    Degenerate(NonzeroCounts),
    #[error("fluid LP optimum is not unique")]
    NotUnique,
    #[error("perturbation outside the stability box: {0}")]
    OutsideBox(String),
    #[error("horizon must be at least 2, got {0}")]
    HorizonTooShort(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// The fluid LP at the market's own capacity, solved once.
#[derive(Debug, Clone)]
pub struct FluidSolution {
    pub lp: DenseLp,
    pub solution: LpSolution,
    pub counts: NonzeroCounts,
    /// Number of resource rows; bundle rows follow them.
    pub resources: usize,
}

impl FluidSolution {
    pub fn new(market: &Market) -> Result<Self, StabilityError> {
        let lp = build_dlp(market, &market.avg_capacity)?;
        let solution = lp::solve(&lp)?;
        let counts = check_nondegenerate(&solution)?;
        Ok(Self {
            lp,
            solution,
            counts,
            resources: market.n_resources(),
        })
    }

    /// Unique and nondegenerate.
    pub fn is_nondegenerate(&self) -> bool {
        self.counts.nondegenerate() && !self.solution.alternative_optima
    }

    pub fn require_nondegenerate(&self) -> Result<(), StabilityError> {
        if !self.counts.nondegenerate() {
            return Err(StabilityError::Degenerate(self.counts));
        }
        if self.solution.alternative_optima {
            return Err(StabilityError::NotUnique);
        }
        Ok(())
    }

    /// Resource prices `lambda*` (bundle-row duals excluded).
    pub fn prices(&self) -> &[f64] {
        &self.solution.duals[..self.resources]
    }

    pub fn value(&self) -> f64 {
        self.solution.objective_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// `mu_j > c_j^T lambda*`.
    pub all_accepted: Vec<usize>,
    /// `mu_j = c_j^T lambda*` within tolerance.
    pub partially_accepted: Vec<usize>,
    /// `mu_j < c_j^T lambda*`.
    pub all_rejected: Vec<usize>,
    /// `all_accepted` and `partially_accepted` together, sorted.
    pub basic_types: Vec<usize>,
    pub binding: Vec<usize>,
    pub nonbinding: Vec<usize>,
    /// Per type, the best arm margin `max_l mu_l - c_l^T lambda*`, with
    /// tolerance-zero margins snapped to exactly zero.
    pub margins: Vec<f64>,
    pub prices: Vec<f64>,
    /// The dual used may not be the only optimal one.
    pub ambiguous: bool,
}

pub fn classify(market: &Market) -> Result<Classification, StabilityError> {
    Ok(classify_fluid(market, &FluidSolution::new(market)?))
}

pub fn classify_fluid(market: &Market, fluid: &FluidSolution) -> Classification {
    let prices = fluid.prices().to_vec();
    let margins: Vec<f64> = market
        .arm_margins(&prices)
        .into_iter()
        .map(|arms| {
            let best = arms.into_iter().fold(f64::NEG_INFINITY, f64::max);
            if best.abs() <= FEASIBILITY_TOL {
                0.0
            } else {
                best
            }
        })
        .collect();
    let mut c = Classification {
        all_accepted: Vec::new(),
        partially_accepted: Vec::new(),
        all_rejected: Vec::new(),
        basic_types: Vec::new(),
        binding: Vec::new(),
        nonbinding: Vec::new(),
        margins: margins.clone(),
        prices,
        ambiguous: fluid.solution.primal_degenerate,
    };
    for (j, &g) in margins.iter().enumerate() {
        if g > 0.0 {
            c.all_accepted.push(j);
            c.basic_types.push(j);
        } else if g < 0.0 {
            c.all_rejected.push(j);
        } else {
            c.partially_accepted.push(j);
            c.basic_types.push(j);
        }
    }
    for (i, s) in fluid.solution.resource_slacks[..fluid.resources]
        .iter()
        .enumerate()
    {
        if s.abs() <= FEASIBILITY_TOL {
            c.binding.push(i);
        } else {
            c.nonbinding.push(i);
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityConstants {
    pub chi: f64,
    pub sigma: f64,
    pub delta: f64,
}

pub fn compute_constants(market: &Market) -> Result<StabilityConstants, StabilityError> {
    constants_of(&FluidSolution::new(market)?)
}

pub fn constants_of(fluid: &FluidSolution) -> Result<StabilityConstants, StabilityError> {
    fluid.require_nondegenerate()?;
    let sol = &fluid.solution;
    let x = sol.standard_form_point();
    let chi = sol
        .basis
        .iter()
        .map(|&j| x[j])
        .filter(|&v| v > ZERO_TOL)
        .fold(f64::INFINITY, f64::min);

    let sf = to_standard_form(&fluid.lp);
    let rows = sf.equality_matrix.len();
    let basis_matrix = DMatrix::from_fn(rows, sol.basis.len(), |r, c| {
        sf.equality_matrix[r][sol.basis[c]]
    });
    let sigma = basis_matrix
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);

    let reduced = sol.standard_form_reduced_costs();
    let delta = reduced
        .iter()
        .enumerate()
        .filter(|(j, r)| sol.basis.binary_search(j).is_err() && **r > FEASIBILITY_TOL)
        .map(|(_, &r)| r)
        .fold(f64::INFINITY, f64::min);

    Ok(StabilityConstants { chi, sigma, delta })
}

/// The perturbation radius for an LP with `n_vars` variables and `n_rows`
/// rows.
pub fn stability_radius(c: &StabilityConstants, n_vars: usize, n_rows: usize) -> f64 {
    let n = n_vars as f64;
    let nm = (n_vars + n_rows) as f64;
    let StabilityConstants { chi, sigma, delta } = *c;
    let shrink = 1f64.min(sigma).min(sigma * sigma);
    [
        shrink * chi.min(delta) / (12.0 * n * n * nm.sqrt()),
        sigma * delta / (12.0 * (n * nm).sqrt()),
        delta / 6.0,
        sigma * chi / (8.0 * nm.sqrt()),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

#[allow(non_snake_case)]
pub fn compute_L(market: &Market) -> Result<f64, StabilityError> {
    let fluid = FluidSolution::new(market)?;
    radius_of(&fluid)
}

pub fn radius_of(fluid: &FluidSolution) -> Result<f64, StabilityError> {
    let c = constants_of(fluid)?;
    Ok(stability_radius(&c, fluid.lp.n_vars(), fluid.lp.n_rows()))
}

/// Largest sup-norm of the resource prices over every basic feasible
/// solution of the dual fluid LP.
pub fn compute_lambda_bar(market: &Market, limit: u128) -> Result<f64, StabilityError> {
    let lp = build_dlp(market, &market.avg_capacity)?;
    let m = market.n_resources();
    Ok(enumerate_dual_bfs(&lp, limit)?
        .iter()
        .flat_map(|d| d.lambda[..m].iter().map(|v| v.abs()))
        .fold(0.0, f64::max))
}

/// `(48 m + 4 n + 12) ||lambda*||_1 / L^2`. The vanishing `o(1)` term of the
/// asymptotic bound has no finite-horizon closed form and is left out.
pub fn bound_nondegenerate(market: &Market) -> Result<f64, StabilityError> {
    let fluid = FluidSolution::new(market)?;
    let radius = radius_of(&fluid)?;
    Ok(nondegenerate_bound_value(
        market.n_resources(),
        market.n_types(),
        fluid.prices().iter().map(|v| v.abs()).sum(),
        radius,
    ))
}

pub fn nondegenerate_bound_value(m: usize, n: usize, price_l1: f64, radius: f64) -> f64 {
    (48.0 * m as f64 + 4.0 * n as f64 + 12.0) * price_l1 / (radius * radius)
}

pub fn bound_degenerate(market: &Market, horizon: usize) -> Result<f64, StabilityError> {
    if horizon < 2 {
        return Err(StabilityError::HorizonTooShort(horizon));
    }
    let lambda_bar = compute_lambda_bar(market, DEFAULT_ENUMERATION_LIMIT)?;
    Ok(degenerate_bound_value(
        market.n_resources(),
        market.n_types(),
        market.min_probability(),
        lambda_bar,
        horizon,
    ))
}

/// `max(1, lambda_bar) (m (sqrt 2 + sqrt(16 n)) + n / sqrt(2 p_min^2))
///  sqrt(T) sqrt(log 2T) + 1 + n + m`.
pub fn degenerate_bound_value(
    m: usize,
    n: usize,
    p_min: f64,
    lambda_bar: f64,
    horizon: usize,
) -> f64 {
    let (mf, nf, t) = (m as f64, n as f64, horizon as f64);
    let rate = mf * (2f64.sqrt() + (16.0 * nf).sqrt()) + nf / (2.0 * p_min * p_min).sqrt();
    lambda_bar.max(1.0) * rate * t.sqrt() * (2.0 * t).ln().sqrt() + 1.0 + nf + mf
}

/// Additive perturbation of the fluid LP data: the resource rows of the
/// matrix, the objective and the resource capacities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    pub matrix: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl Perturbation {
    pub fn zero(n_rows: usize, n_vars: usize) -> Self {
        Self {
            matrix: vec![vec![0.0; n_vars]; n_rows],
            objective: vec![0.0; n_vars],
            rhs: vec![0.0; n_rows],
        }
    }

    fn apply(&self, lp: &DenseLp) -> Result<DenseLp, StabilityError> {
        let m = self.rhs.len();
        if self.matrix.len() != m
            || m > lp.n_rows()
            || self.objective.len() != lp.n_vars()
            || self.matrix.iter().any(|r| r.len() != lp.n_vars())
        {
            return Err(LpError::Dimension("perturbation does not match the LP".into()).into());
        }
        let mut out = lp.clone();
        for (row, d) in out.matrix.iter_mut().zip(&self.matrix) {
            for (a, da) in row.iter_mut().zip(d) {
                *a += da;
            }
        }
        for (c, dc) in out.objective.iter_mut().zip(&self.objective) {
            *c += dc;
        }
        for (b, db) in out.rhs.iter_mut().zip(&self.rhs) {
            *b += db;
        }
        Ok(out)
    }
}

/// Whether the perturbed fluid LP has the same standard-form basis and the
/// same binding resources as the unperturbed one. No size restriction.
pub fn basis_preserved(
    market: &Market,
    perturbation: &Perturbation,
) -> Result<bool, StabilityError> {
    let fluid = FluidSolution::new(market)?;
    basis_preserved_for(&fluid, perturbation)
}

pub fn basis_preserved_for(
    fluid: &FluidSolution,
    perturbation: &Perturbation,
) -> Result<bool, StabilityError> {
    let perturbed = perturbation.apply(&fluid.lp)?;
    let sol = lp::solve(&perturbed)?;
    let binding = |s: &LpSolution| -> Vec<bool> {
        s.resource_slacks[..fluid.resources]
            .iter()
            .map(|v| v.abs() <= FEASIBILITY_TOL)
            .collect()
    };
    Ok(sol.basis == fluid.solution.basis && binding(&sol) == binding(&fluid.solution))
}

/// Checks that `perturbation` lies in the stability box of radius `radius`
/// (two-sided on binding capacities, lower-bounded only on non-binding ones),
/// then reports whether basis and bindingness are preserved.
pub fn check_perturbation_invariance(
    market: &Market,
    perturbation: &Perturbation,
    radius: f64,
) -> Result<bool, StabilityError> {
    let fluid = FluidSolution::new(market)?;
    check_perturbation_invariance_for(market, &fluid, perturbation, radius)
}

pub fn check_perturbation_invariance_for(
    market: &Market,
    fluid: &FluidSolution,
    perturbation: &Perturbation,
    radius: f64,
) -> Result<bool, StabilityError> {
    let classes = classify_fluid(market, fluid);
    let too_big = |v: &f64| v.abs() > radius;
    if perturbation.matrix.iter().flatten().any(too_big) {
        return Err(StabilityError::OutsideBox("matrix entry exceeds L".into()));
    }
    if perturbation.objective.iter().any(too_big) {
        return Err(StabilityError::OutsideBox(
            "objective entry exceeds L".into(),
        ));
    }
    for &i in &classes.binding {
        if too_big(&perturbation.rhs[i]) {
            return Err(StabilityError::OutsideBox(format!(
                "binding capacity {} moved by more than L",
                i + 1
            )));
        }
    }
    for &i in &classes.nonbinding {
        if perturbation.rhs[i] < -radius {
            return Err(StabilityError::OutsideBox(format!(
                "non-binding capacity {} lowered by more than L",
                i + 1
            )));
        }
    }
    basis_preserved_for(fluid, perturbation)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub opt_d: f64,
    pub primal: Vec<f64>,
    pub prices: Vec<f64>,
    pub nonzero_counts: NonzeroCounts,
    pub degenerate: bool,
    pub chi: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    #[serde(rename = "L")]
    pub radius: Option<f64>,
    /// `None` when dual enumeration exceeds the candidate limit.
    pub lambda_bar: Option<f64>,
    pub p_underline: f64,
    pub bound_nondegenerate: Option<f64>,
    pub classification: Classification,
}

pub fn stability_report(market: &Market, limit: u128) -> Result<StabilityReport, StabilityError> {
    let fluid = FluidSolution::new(market)?;
    let classification = classify_fluid(market, &fluid);
    let constants = constants_of(&fluid).ok();
    let radius = constants.map(|c| stability_radius(&c, fluid.lp.n_vars(), fluid.lp.n_rows()));
    let lambda_bar = match compute_lambda_bar(market, limit) {
        Ok(v) => Some(v),
        Err(StabilityError::Lp(LpError::TooManyCandidates { .. })) => None,
        Err(e) => return Err(e),
    };
    let bound = radius.map(|r| {
        nondegenerate_bound_value(
            market.n_resources(),
            market.n_types(),
            fluid.prices().iter().map(|v| v.abs()).sum(),
            r,
        )
    });
    Ok(StabilityReport {
        opt_d: fluid.value(),
        primal: fluid.solution.primal.clone(),
        prices: fluid.prices().to_vec(),
        nonzero_counts: fluid.counts,
        degenerate: !fluid.is_nondegenerate(),
        chi: constants.map(|c| c.chi),
        sigma: constants.map(|c| c.sigma),
        delta: constants.map(|c| c.delta),
        radius,
        lambda_bar,
        p_underline: market.min_probability(),
        bound_nondegenerate: bound,
        classification,
    })
}
