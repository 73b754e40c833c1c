//! Dense linear programming for the small allocation LPs used throughout the
//! crate.
//!
//! Every LP here has the shape
//!
//! ```text
//! max  objective^T y
//! s.t. matrix * y <= rhs
//!      0 <= y <= upper_bounds
//! ```
//!
//! with `rhs >= 0`, so `y = 0` is always feasible and the feasible region is
//! bounded. [`solve`] runs a bounded-variable primal simplex with Bland's
//! rule. It is equivalent to a simplex on the standard form produced by
//! [`to_standard_form`], with the box slacks `z = u - y` handled implicitly
//! instead of as extra rows. Bases are always reported in standard-form
//! column indices.
//!
//! [`enumerate_vertices`] and [`enumerate_dual_bfs`] are brute-force oracles
//! for desk-scale instances. They share no code with the simplex.

mod enumerate;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enumerate::{
    enumerate_dual_bfs, enumerate_standard_form_bfs, enumerate_vertices, DualBfs, Vertex,
};
pub use simplex::solve;

/// Absolute tolerance on residuals and reduced costs.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Values with magnitude at or below this are treated as zero when counting
/// the support of a solution.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rhs entry {row} is negative ({value})")]
    NegativeRhs { row: usize, value: f64 },
    #[error("upper bound of variable {var} must be finite and non-negative, got {value}")]
    InvalidBound { var: usize, value: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("simplex did not terminate after {iterations} pivots")]
    SolverFailure { iterations: usize },
    #[error("operation requires an optimal solution, got {0:?}")]
    NotOptimal(LpStatus),
    #[error("enumeration needs {candidates} basis candidates, limit is {limit}")]
    TooManyCandidates { candidates: u128, limit: u128 },
}

/// `max objective^T y  s.t.  matrix * y <= rhs,  0 <= y <= upper_bounds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLp {
    pub objective: Vec<f64>,
    /// Row-major, `rhs.len()` rows of `objective.len()` entries.
    pub matrix: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl DenseLp {
    pub fn new(
        objective: Vec<f64>,
        matrix: Vec<Vec<f64>>,
        rhs: Vec<f64>,
        upper_bounds: Vec<f64>,
    ) -> Result<Self, LpError> {
        let lp = Self {
            objective,
            matrix,
            rhs,
            upper_bounds,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Checks dimensions, finiteness and the box bounds. Does not look at the
    /// sign of `rhs`; [`solve`] rejects negative entries separately.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.matrix.len() != self.rhs.len() {
            return Err(LpError::Dimension(format!(
                "{} matrix rows but {} rhs entries",
                self.matrix.len(),
                self.rhs.len()
            )));
        }
        if let Some((i, row)) = self.matrix.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(LpError::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if self.upper_bounds.len() != n {
            return Err(LpError::Dimension(format!(
                "{} upper bounds for {n} variables",
                self.upper_bounds.len()
            )));
        }
        if let Some((var, &value)) = self
            .upper_bounds
            .iter()
            .enumerate()
            .find(|(_, u)| !u.is_finite() || **u < 0.0)
        {
            return Err(LpError::InvalidBound { var, value });
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("rhs"));
        }
        if self.matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("matrix"));
        }
        Ok(())
    }

    pub fn objective_at(&self, y: &[f64]) -> f64 {
        dot(&self.objective, y)
    }

    /// `matrix * y`.
    pub fn row_activity(&self, y: &[f64]) -> Vec<f64> {
        self.matrix.iter().map(|row| dot(row, y)).collect()
    }

    pub fn is_feasible(&self, y: &[f64], tol: f64) -> bool {
        y.len() == self.n_vars()
            && y.iter()
                .zip(&self.upper_bounds)
                .all(|(&v, &u)| v >= -tol && v <= u + tol)
            && self
                .row_activity(y)
                .iter()
                .zip(&self.rhs)
                .all(|(&a, &b)| a <= b + tol)
    }

    /// Column `j` of the constraint matrix.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.matrix.iter().map(|row| row[j]).collect()
    }
}

/// Equality form of a [`DenseLp`]:
///
/// ```text
/// max  objective^T (y, s, z)
/// s.t. matrix * y + s     = rhs
///      y          + z     = upper_bounds
///      y, s, z >= 0
/// ```
///
/// Columns are ordered `y_0..y_{n-1}, s_0..s_{m-1}, z_0..z_{n-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardFormLp {
    pub n_vars: usize,
    pub n_rows: usize,
    /// `(n_rows + n_vars) x (2 n_vars + n_rows)`.
    pub equality_matrix: Vec<Vec<f64>>,
    pub equality_rhs: Vec<f64>,
    pub objective: Vec<f64>,
}

impl StandardFormLp {
    pub fn n_columns(&self) -> usize {
        2 * self.n_vars + self.n_rows
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.equality_matrix.iter().map(|row| row[j]).collect()
    }

    /// Maps a point of the inequality LP to `(y, s, z)`.
    pub fn lift(&self, lp: &DenseLp, y: &[f64]) -> Vec<f64> {
        let mut x = y.to_vec();
        x.extend(lp.row_activity(y).iter().zip(&lp.rhs).map(|(a, b)| b - a));
        x.extend(lp.upper_bounds.iter().zip(y).map(|(u, v)| u - v));
        x
    }

    /// Column labels, `y1, s1, z1, ...` (1-based), for reports.
    pub fn column_label(&self, j: usize) -> String {
        if j < self.n_vars {
            format!("y{}", j + 1)
        } else if j < self.n_vars + self.n_rows {
            format!("s{}", j - self.n_vars + 1)
        } else {
            format!("z{}", j - self.n_vars - self.n_rows + 1)
        }
    }
}

pub fn to_standard_form(lp: &DenseLp) -> StandardFormLp {
    let n = lp.n_vars();
    let m = lp.n_rows();
    let cols = 2 * n + m;
    let mut equality_matrix = Vec::with_capacity(m + n);
    for (i, row) in lp.matrix.iter().enumerate() {
        let mut r = vec![0.0; cols];
        r[..n].copy_from_slice(row);
        r[n + i] = 1.0;
        equality_matrix.push(r);
    }
    for j in 0..n {
        let mut r = vec![0.0; cols];
        r[j] = 1.0;
        r[n + m + j] = 1.0;
        equality_matrix.push(r);
    }
    let mut equality_rhs = lp.rhs.clone();
    equality_rhs.extend_from_slice(&lp.upper_bounds);
    let mut objective = lp.objective.clone();
    objective.resize(cols, 0.0);
    StandardFormLp {
        n_vars: n,
        n_rows: m,
        equality_matrix,
        equality_rhs,
        objective,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// `s = rhs - matrix * y`.
    pub resource_slacks: Vec<f64>,
    /// `z = upper_bounds - y`.
    pub box_slacks: Vec<f64>,
    /// Row prices `lambda`, one per constraint row.
    pub duals: Vec<f64>,
    /// `objective_j - column_j^T lambda`, signed.
    pub reduced_profits: Vec<f64>,
    /// Duals of the box rows, `gamma_j = max(0, reduced_profit_j)`.
    pub box_duals: Vec<f64>,
    pub objective_value: f64,
    /// Sorted standard-form column indices of the terminal basis.
    pub basis: Vec<usize>,
    /// Some non-basic standard-form column has a zero reduced cost, so the
    /// primal optimum may not be unique.
    pub alternative_optima: bool,
    /// Some basic variable sits at zero, so the dual optimum may not be
    /// unique.
    pub primal_degenerate: bool,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// `rhs^T lambda + upper^T gamma`.
    pub fn dual_objective(&self, lp: &DenseLp) -> f64 {
        dot(&lp.rhs, &self.duals) + dot(&lp.upper_bounds, &self.box_duals)
    }

    /// Full standard-form point `(y, s, z)`.
    pub fn standard_form_point(&self) -> Vec<f64> {
        let mut x = self.primal.clone();
        x.extend_from_slice(&self.resource_slacks);
        x.extend_from_slice(&self.box_slacks);
        x
    }

    /// Standard-form reduced costs in minimisation convention,
    /// `A_j^T (lambda, gamma) - objective_j`. Non-negative at optimality and
    /// zero on basic columns.
    pub fn standard_form_reduced_costs(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self
            .reduced_profits
            .iter()
            .zip(&self.box_duals)
            .map(|(rp, g)| g - rp)
            .collect();
        r.extend_from_slice(&self.duals);
        r.extend_from_slice(&self.box_duals);
        r
    }
}

/// Support sizes of an optimal standard-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NonzeroCounts {
    pub primal: usize,
    pub resource_slacks: usize,
    pub box_slacks: usize,
    /// `rows + vars`, the basis size.
    pub required: usize,
}

impl NonzeroCounts {
    pub fn total(&self) -> usize {
        self.primal + self.resource_slacks + self.box_slacks
    }

    pub fn nondegenerate(&self) -> bool {
        self.total() == self.required
    }
}

/// Counts the non-zero `y`, `s` and `z` entries of an optimal solution. The
/// solution is nondegenerate iff they add up to `rows + vars`.
pub fn check_nondegenerate(sol: &LpSolution) -> Result<NonzeroCounts, LpError> {
    if !sol.is_optimal() {
        return Err(LpError::NotOptimal(sol.status));
    }
    let nz = |v: &[f64]| v.iter().filter(|x| x.abs() > ZERO_TOL).count();
    Ok(NonzeroCounts {
        primal: nz(&sol.primal),
        resource_slacks: nz(&sol.resource_slacks),
        box_slacks: nz(&sol.box_slacks),
        required: sol.primal.len() + sol.duals.len(),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn one_var() -> DenseLp {
        DenseLp::new(vec![1.0], vec![vec![0.5]], vec![0.25], vec![1.0]).unwrap()
    }

    pub(crate) fn example_lp(b: [f64; 2]) -> DenseLp {
        DenseLp::new(
            vec![0.3, 0.36, 0.32],
            vec![vec![0.3, 0.6, 0.4], vec![0.6, 0.3, 0.4]],
            b.to_vec(),
            vec![1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn standard_form_shapes() {
        let sf = to_standard_form(&one_var());
        assert_eq!(sf.equality_matrix.len(), 2);
        assert_eq!(sf.n_columns(), 3);
        assert_eq!(sf.equality_matrix[0], vec![0.5, 1.0, 0.0]);
        assert_eq!(sf.equality_matrix[1], vec![1.0, 0.0, 1.0]);
        assert_eq!(sf.equality_rhs, vec![0.25, 1.0]);

        let sf = to_standard_form(&example_lp([1.0, 1.0]));
        assert_eq!(sf.equality_matrix.len(), 5);
        assert!(sf.equality_matrix.iter().all(|r| r.len() == 8));
        assert_eq!(sf.objective, vec![0.3, 0.36, 0.32, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn standard_form_keeps_zero_objective() {
        let lp = DenseLp::new(vec![0.0; 2], vec![vec![1.0, 1.0]], vec![0.7], vec![1.0; 2]).unwrap();
        let sf = to_standard_form(&lp);
        assert!(sf.objective.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn lift_preserves_objective_and_equalities() {
        let lp = example_lp([1.0, 1.0]);
        let sf = to_standard_form(&lp);
        let y = [0.2, 0.5, 0.9];
        let x = sf.lift(&lp, &y);
        assert_eq!(dot(&sf.objective, &x), lp.objective_at(&y));
        for (row, rhs) in sf.equality_matrix.iter().zip(&sf.equality_rhs) {
            assert!((dot(row, &x) - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        assert!(matches!(
            DenseLp::new(vec![1.0, 2.0], vec![vec![1.0]], vec![1.0], vec![1.0, 1.0]),
            Err(LpError::Dimension(_))
        ));
        assert!(matches!(
            DenseLp::new(vec![1.0], vec![vec![1.0]], vec![1.0], vec![f64::INFINITY]),
            Err(LpError::InvalidBound { .. })
        ));
        assert!(matches!(
            DenseLp::new(vec![1.0], vec![vec![1.0]], vec![1.0], vec![-1.0]),
            Err(LpError::InvalidBound { .. })
        ));
    }

    #[test]
    fn nondegeneracy_counts() {
        let sol = solve(&example_lp([1.0, 1.0])).unwrap();
        let c = check_nondegenerate(&sol).unwrap();
        assert_eq!((c.primal, c.resource_slacks, c.box_slacks), (3, 0, 2));
        assert!(c.nondegenerate());

        let sol = solve(&example_lp([1.0, 1.15])).unwrap();
        let c = check_nondegenerate(&sol).unwrap();
        assert_eq!((c.primal, c.resource_slacks, c.box_slacks), (3, 0, 1));
        assert_eq!(c.total(), 4);
        assert!(!c.nondegenerate());

        let sol = solve(&one_var()).unwrap();
        let c = check_nondegenerate(&sol).unwrap();
        assert_eq!((c.primal, c.resource_slacks, c.box_slacks), (1, 0, 1));
        assert!(c.nondegenerate());
    }

    #[test]
    fn nondegeneracy_needs_optimal_status() {
        let mut sol = solve(&one_var()).unwrap();
        sol.status = LpStatus::Unbounded;
        assert_eq!(
            check_nondegenerate(&sol),
            Err(LpError::NotOptimal(LpStatus::Unbounded))
        );
    }
}
