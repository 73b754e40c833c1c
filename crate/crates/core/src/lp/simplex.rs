use super::{dot, DenseLp, LpError, LpSolution, LpStatus, FEASIBILITY_TOL, ZERO_TOL};

/// Pivot elements smaller than this are never used.
const PIVOT_TOL: f64 = 1e-11;

/// Slacks below this are round-off from a tight row.
const SNAP_TOL: f64 = 1e-12;

/// Step lengths closer than this are considered tied in the ratio test.
const RATIO_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

/// Dense tableau over the columns `y_0..y_{n-1}, s_0..s_{m-1}`. Box bounds on
/// `y` are handled by letting non-basic variables rest at either bound.
struct Tableau {
    m: usize,
    ncol: usize,
    /// Row-major `m x ncol`, equal to `B^-1 [A | I]`.
    tab: Vec<f64>,
    cost: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    /// Values of the basic variables, by row.
    beta: Vec<f64>,
    /// Reduced profits `cost_j - cost_B^T B^-1 a_j`.
    reduced: Vec<f64>,
}

impl Tableau {
    fn new(lp: &DenseLp) -> Self {
        let n = lp.n_vars();
        let m = lp.n_rows();
        let ncol = n + m;
        let mut tab = vec![0.0; m * ncol];
        for (i, row) in lp.matrix.iter().enumerate() {
            tab[i * ncol..i * ncol + n].copy_from_slice(row);
            tab[i * ncol + n + i] = 1.0;
        }
        let mut cost = lp.objective.clone();
        cost.resize(ncol, 0.0);
        let mut upper = lp.upper_bounds.clone();
        upper.resize(ncol, f64::INFINITY);
        let mut state = vec![VarState::AtLower; ncol];
        for s in &mut state[n..] {
            *s = VarState::Basic;
        }
        Self {
            m,
            ncol,
            tab,
            reduced: cost.clone(),
            cost,
            upper,
            basis: (n..ncol).collect(),
            state,
            beta: lp.rhs.clone(),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.tab[i * self.ncol + j]
    }

    /// Bland: the lowest-index column whose reduced profit improves the
    /// objective when moved off its bound.
    fn entering(&self) -> Option<(usize, f64)> {
        (0..self.ncol).find_map(|j| match self.state[j] {
            VarState::AtLower if self.reduced[j] > FEASIBILITY_TOL && self.upper[j] > 0.0 => {
                Some((j, 1.0))
            }
            VarState::AtUpper if self.reduced[j] < -FEASIBILITY_TOL => Some((j, -1.0)),
            _ => None,
        })
    }

    /// Ratio test for moving column `j` in direction `dir`. Returns the step
    /// length and the leaving row with the bound it hits, or `None` for a
    /// bound flip of `j` itself. Ties go to the flip, then to the
    /// lowest-index leaving variable.
    fn ratio_test(&self, j: usize, dir: f64) -> (f64, Option<(usize, bool)>) {
        let mut theta = self.upper[j];
        let mut leave: Option<(usize, bool)> = None;
        for i in 0..self.m {
            let rate = -dir * self.at(i, j);
            let b = self.basis[i];
            let (limit, to_upper) = if rate < -PIVOT_TOL {
                (self.beta[i] / -rate, false)
            } else if rate > PIVOT_TOL && self.upper[b].is_finite() {
                ((self.upper[b] - self.beta[i]) / rate, true)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            let better = if limit < theta - RATIO_TIE_TOL {
                true
            } else if limit <= theta + RATIO_TIE_TOL {
                matches!(leave, Some((r, _)) if b < self.basis[r])
            } else {
                false
            };
            if better {
                theta = limit;
                leave = Some((i, to_upper));
            }
        }
        (theta, leave)
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let ncol = self.ncol;
        let p = self.at(r, j);
        for v in &mut self.tab[r * ncol..(r + 1) * ncol] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.tab[r * ncol..(r + 1) * ncol].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.at(i, j);
            if f != 0.0 {
                for (v, pr) in self.tab[i * ncol..(i + 1) * ncol]
                    .iter_mut()
                    .zip(&pivot_row)
                {
                    *v -= f * pr;
                }
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for (v, pr) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtUpper => self.upper[j],
            _ => 0.0,
        }
    }
}

/// Solves a [`DenseLp`] by bounded-variable primal simplex with Bland's rule.
///
/// The starting basis is the all-slack basis, which is feasible because
/// `rhs >= 0` is required. The pivot sequence depends only on the input, so
/// identical inputs give bit-identical solutions.
pub fn solve(lp: &DenseLp) -> Result<LpSolution, LpError> {
    lp.validate()?;
    if let Some((row, &value)) = lp.rhs.iter().enumerate().find(|(_, b)| **b < 0.0) {
        return Err(LpError::NegativeRhs { row, value });
    }
    let n = lp.n_vars();
    let m = lp.n_rows();
    let mut tb = Tableau::new(lp);
    let max_iter = 10_000 + 200 * (n + m);
    let mut iterations = 0;

    while let Some((j, dir)) = tb.entering() {
        if iterations >= max_iter {
            return Err(LpError::SolverFailure { iterations });
        }
        iterations += 1;

        let (theta, leave) = tb.ratio_test(j, dir);
        if !theta.is_finite() {
            return Ok(unbounded(n, m, iterations));
        }
        for i in 0..m {
            tb.beta[i] -= dir * tb.at(i, j) * theta;
        }
        match leave {
            None => {
                tb.state[j] = if dir > 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
            }
            Some((r, to_upper)) => {
                let leaving = tb.basis[r];
                tb.state[leaving] = if to_upper {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
                tb.beta[r] = tb.nonbasic_value(j) + dir * theta;
                tb.pivot(r, j);
                tb.basis[r] = j;
                tb.state[j] = VarState::Basic;
            }
        }
    }

    Ok(extract(lp, &tb, iterations))
}

fn unbounded(n: usize, m: usize, iterations: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Unbounded,
        primal: vec![f64::NAN; n],
        resource_slacks: vec![f64::NAN; m],
        box_slacks: vec![f64::NAN; n],
        duals: vec![f64::NAN; m],
        reduced_profits: vec![f64::NAN; n],
        box_duals: vec![f64::NAN; n],
        objective_value: f64::INFINITY,
        basis: Vec::new(),
        alternative_optima: false,
        primal_degenerate: false,
        iterations,
    }
}

/// Recomputes the primal point and the duals from the terminal basis rather
/// than trusting the incrementally updated values.
fn extract(lp: &DenseLp, tb: &Tableau, iterations: usize) -> LpSolution {
    let n = lp.n_vars();
    let m = lp.n_rows();
    let ncol = tb.ncol;
    // Columns n..n+m of the tableau hold B^-1.
    let binv = |r: usize, i: usize| tb.tab[r * ncol + n + i];

    let mut adjusted_rhs = lp.rhs.clone();
    for j in 0..n {
        if tb.state[j] == VarState::AtUpper {
            for (i, b) in adjusted_rhs.iter_mut().enumerate() {
                *b -= lp.matrix[i][j] * lp.upper_bounds[j];
            }
        }
    }
    let mut values: Vec<f64> = (0..ncol).map(|j| tb.nonbasic_value(j)).collect();
    for r in 0..m {
        let v: f64 = (0..m).map(|i| binv(r, i) * adjusted_rhs[i]).sum();
        let b = tb.basis[r];
        values[b] = clamp_into(v, tb.upper[b]);
    }

    let primal = values[..n].to_vec();
    let resource_slacks: Vec<f64> = lp
        .row_activity(&primal)
        .iter()
        .zip(&lp.rhs)
        .map(|(a, b)| {
            let s = b - a;
            if s.abs() <= SNAP_TOL {
                0.0
            } else {
                s
            }
        })
        .collect();
    let box_slacks: Vec<f64> = lp
        .upper_bounds
        .iter()
        .zip(&primal)
        .map(|(u, y)| u - y)
        .collect();

    let duals: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .map(|r| tb.cost[tb.basis[r]] * binv(r, i))
                .sum::<f64>()
        })
        .collect();
    let reduced_profits: Vec<f64> = (0..n)
        .map(|j| lp.objective[j] - (0..m).map(|i| lp.matrix[i][j] * duals[i]).sum::<f64>())
        .collect();
    let box_duals: Vec<f64> = reduced_profits.iter().map(|r| r.max(0.0)).collect();

    // Standard-form basis: y/s basic in the tableau, plus z_j for every y_j
    // that is basic or at its lower bound, plus y_j for every y_j at its
    // upper bound.
    let mut basis: Vec<usize> = tb.basis.clone();
    let mut alternative_optima = false;
    let mut primal_degenerate = tb.basis.iter().any(|&b| values[b].abs() <= ZERO_TOL);
    for j in 0..n {
        match tb.state[j] {
            VarState::Basic => {
                basis.push(n + m + j);
                primal_degenerate |= box_slacks[j].abs() <= ZERO_TOL;
            }
            VarState::AtLower => {
                basis.push(n + m + j);
                primal_degenerate |= box_slacks[j].abs() <= ZERO_TOL;
                alternative_optima |= reduced_profits[j].abs() <= FEASIBILITY_TOL;
            }
            VarState::AtUpper => {
                basis.push(j);
                primal_degenerate |= primal[j].abs() <= ZERO_TOL;
                alternative_optima |= reduced_profits[j].abs() <= FEASIBILITY_TOL;
            }
        }
    }
    for (i, dual) in duals.iter().enumerate() {
        if tb.state[n + i] != VarState::Basic {
            alternative_optima |= dual.abs() <= FEASIBILITY_TOL;
        }
    }
    basis.sort_unstable();

    LpSolution {
        status: LpStatus::Optimal,
        objective_value: dot(&lp.objective, &primal),
        primal,
        resource_slacks,
        box_slacks,
        duals,
        reduced_profits,
        box_duals,
        basis,
        alternative_optima,
        primal_degenerate,
        iterations,
    }
}

/// Snaps round-off just outside `[0, upper]` back onto the bound.
fn clamp_into(v: f64, upper: f64) -> f64 {
    if v < 0.0 && v > -FEASIBILITY_TOL {
        0.0
    } else if v > upper && v < upper + FEASIBILITY_TOL {
        upper
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::tests::{example_lp, one_var};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn single_variable_single_row() {
        let sol = solve(&one_var()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(close(sol.primal[0], 0.5));
        assert!(close(sol.objective_value, 0.5));
        assert!(close(sol.duals[0], 2.0));
        assert!(close(sol.box_slacks[0], 0.5));
    }

    #[test]
    fn example_instance_nondegenerate() {
        let lp = example_lp([1.0, 1.0]);
        let sol = solve(&lp).unwrap();
        for (y, e) in sol.primal.iter().zip([2.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!(close(*y, e), "{:?}", sol.primal);
        }
        assert!(close(sol.objective_value, 0.76));
        assert!(close(sol.duals[0], 7.0 / 15.0));
        assert!(close(sol.duals[1], 4.0 / 15.0));
        assert!(!sol.primal_degenerate);
        assert!(!sol.alternative_optima);
        // y1, y2, y3, z1, z2
        assert_eq!(sol.basis, vec![0, 1, 2, 5, 6]);
    }

    #[test]
    fn example_instance_degenerate() {
        let lp = example_lp([1.0, 1.15]);
        let sol = solve(&lp).unwrap();
        assert!(close(sol.objective_value, 0.80));
        for (y, e) in sol.primal.iter().zip([1.0, 0.5, 1.0]) {
            assert!(close(*y, e), "{:?}", sol.primal);
        }
        assert!(sol.primal_degenerate);
        assert_eq!(sol.basis.len(), 5);
    }

    #[test]
    fn zero_capacity_accepts_nothing() {
        let lp = DenseLp::new(
            vec![0.4, 0.9],
            vec![vec![0.2, 0.5], vec![1.0, 0.0]],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.primal, vec![0.0, 0.0]);
        assert_eq!(sol.objective_value, 0.0);
    }

    #[test]
    fn negative_rhs_is_rejected() {
        let lp = DenseLp::new(vec![1.0], vec![vec![1.0]], vec![-0.1], vec![1.0]).unwrap();
        assert!(matches!(
            solve(&lp),
            Err(LpError::NegativeRhs { row: 0, .. })
        ));
    }

    #[test]
    fn no_rows_takes_every_profitable_variable() {
        let lp = DenseLp::new(vec![1.0, -1.0, 0.0], vec![], vec![], vec![2.0, 1.0, 1.0]).unwrap();
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.primal, vec![2.0, 0.0, 0.0]);
        assert!(sol.alternative_optima);
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let lp = example_lp([0.83, 1.07]);
        let a = solve(&lp).unwrap();
        let b = solve(&lp).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn standard_form_reduced_costs_vanish_on_basis() {
        let sol = solve(&example_lp([1.0, 1.0])).unwrap();
        let rc = sol.standard_form_reduced_costs();
        for &b in &sol.basis {
            assert!(rc[b].abs() < 1e-12, "column {b}: {}", rc[b]);
        }
        assert!(rc.iter().all(|&r| r > -1e-12));
    }
}
