//! Exhaustive basis enumeration. Exponential, so callers pass a hard limit on
//! the number of candidate active sets.

use super::{dot, DenseLp, LpError, StandardFormLp, FEASIBILITY_TOL};

/// Candidate systems whose pivots fall below this are treated as singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Distinct vertices closer than this (sup norm) are merged.
const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub point: Vec<f64>,
    pub objective: f64,
}

/// A basic feasible solution of the dual
/// `min rhs^T lambda + upper^T gamma  s.t.  A^T lambda + gamma >= objective,
/// lambda, gamma >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBfs {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub objective: f64,
}

/// `a^T x <= b`.
struct HalfSpace {
    a: Vec<f64>,
    b: f64,
}

/// Every basic feasible point of the primal polytope. An empty result means
/// the LP is infeasible.
pub fn enumerate_vertices(lp: &DenseLp, limit: u128) -> Result<Vec<Vertex>, LpError> {
    lp.validate()?;
    let n = lp.n_vars();
    let mut hs: Vec<HalfSpace> = lp
        .matrix
        .iter()
        .zip(&lp.rhs)
        .map(|(row, &b)| HalfSpace { a: row.clone(), b })
        .collect();
    for j in 0..n {
        hs.push(HalfSpace {
            a: unit(n, j, 1.0),
            b: lp.upper_bounds[j],
        });
        hs.push(HalfSpace {
            a: unit(n, j, -1.0),
            b: 0.0,
        });
    }
    let points = polyhedron_vertices(&hs, n, limit)?;
    Ok(points
        .into_iter()
        .map(|point| Vertex {
            objective: lp.objective_at(&point),
            point,
        })
        .collect())
}

/// Every basic feasible solution of the dual of `lp`.
pub fn enumerate_dual_bfs(lp: &DenseLp, limit: u128) -> Result<Vec<DualBfs>, LpError> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.n_rows();
    let dim = m + n;
    let mut hs = Vec::with_capacity(2 * n + m);
    // -(A_j^T lambda + gamma_j) <= -objective_j
    for j in 0..n {
        let mut a = vec![0.0; dim];
        for (ai, row) in a.iter_mut().zip(&lp.matrix) {
            *ai = -row[j];
        }
        a[m + j] = -1.0;
        hs.push(HalfSpace {
            a,
            b: -lp.objective[j],
        });
    }
    for k in 0..dim {
        hs.push(HalfSpace {
            a: unit(dim, k, -1.0),
            b: 0.0,
        });
    }
    let points = polyhedron_vertices(&hs, dim, limit)?;
    Ok(points
        .into_iter()
        .map(|w| {
            let lambda = w[..m].to_vec();
            let gamma = w[m..].to_vec();
            DualBfs {
                objective: dot(&lp.rhs, &lambda) + dot(&lp.upper_bounds, &gamma),
                lambda,
                gamma,
            }
        })
        .collect())
}

/// Basic feasible solutions of the equality system of a standard-form LP,
/// found by choosing `rows` columns at a time. Returns full `(y, s, z)` points
/// and their objective values; the basis size is `n_rows + n_vars`.
pub fn enumerate_standard_form_bfs(
    sf: &StandardFormLp,
    limit: u128,
) -> Result<Vec<Vertex>, LpError> {
    let rows = sf.equality_matrix.len();
    let cols = sf.n_columns();
    check_limit(cols, rows, limit)?;
    let mut out: Vec<Vertex> = Vec::new();
    for subset in Combinations::new(cols, rows) {
        let a: Vec<Vec<f64>> = sf
            .equality_matrix
            .iter()
            .map(|row| subset.iter().map(|&j| row[j]).collect())
            .collect();
        let Some(xb) = solve_square(a, sf.equality_rhs.clone()) else {
            continue;
        };
        if xb.iter().any(|&v| v < -FEASIBILITY_TOL) {
            continue;
        }
        let mut x = vec![0.0; cols];
        for (&j, v) in subset.iter().zip(xb) {
            x[j] = v;
        }
        push_unique(&mut out, x, |x| dot(&sf.objective, x));
    }
    Ok(out)
}

fn polyhedron_vertices(
    hs: &[HalfSpace],
    dim: usize,
    limit: u128,
) -> Result<Vec<Vec<f64>>, LpError> {
    check_limit(hs.len(), dim, limit)?;
    let mut out: Vec<Vertex> = Vec::new();
    for active in Combinations::new(hs.len(), dim) {
        let a: Vec<Vec<f64>> = active.iter().map(|&k| hs[k].a.clone()).collect();
        let b: Vec<f64> = active.iter().map(|&k| hs[k].b).collect();
        let Some(x) = solve_square(a, b) else {
            continue;
        };
        if hs.iter().all(|h| dot(&h.a, &x) <= h.b + FEASIBILITY_TOL) {
            push_unique(&mut out, x, |_| 0.0);
        }
    }
    Ok(out.into_iter().map(|v| v.point).collect())
}

fn push_unique(out: &mut Vec<Vertex>, x: Vec<f64>, objective: impl Fn(&[f64]) -> f64) {
    let dup = out.iter().any(|v| {
        v.point
            .iter()
            .zip(&x)
            .all(|(p, q)| (p - q).abs() <= DEDUP_TOL)
    });
    if !dup {
        out.push(Vertex {
            objective: objective(&x),
            point: x,
        });
    }
}

fn check_limit(n: usize, k: usize, limit: u128) -> Result<(), LpError> {
    let candidates = binomial(n, k);
    if candidates > limit {
        return Err(LpError::TooManyCandidates { candidates, limit });
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn unit(n: usize, j: usize, v: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = v;
    e
}

/// Gaussian elimination with partial pivoting. `None` if singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < SINGULAR_TOL {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                let (top, bottom) = a.split_at_mut(r);
                for (x, p) in bottom[0][col..n].iter_mut().zip(&top[col][col..n]) {
                    *x -= f * p;
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Lexicographic k-subsets of `0..n`.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::tests::{example_lp, one_var};
    use crate::lp::to_standard_form;

    fn max_objective(v: &[Vertex]) -> f64 {
        v.iter()
            .map(|v| v.objective)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn combinations_are_exhaustive() {
        assert_eq!(Combinations::new(5, 2).count(), 10);
        assert_eq!(Combinations::new(4, 0).count(), 1);
        assert_eq!(Combinations::new(2, 3).count(), 0);
        assert_eq!(binomial(8, 5), 56);
    }

    #[test]
    fn one_variable_vertices() {
        let v = enumerate_vertices(&one_var(), 1_000).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|v| v.point == vec![0.0] && v.objective == 0.0));
        assert!(v.iter().any(|v| (v.point[0] - 0.5).abs() < 1e-12));
        assert!((max_objective(&v) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn example_instance_vertex_max() {
        let v = enumerate_vertices(&example_lp([1.0, 1.0]), 1_000).unwrap();
        assert!((max_objective(&v) - 0.76).abs() < 1e-12);
        let v = enumerate_vertices(&example_lp([1.0, 1.15]), 1_000).unwrap();
        assert!((max_objective(&v) - 0.80).abs() < 1e-12);
    }

    #[test]
    fn infeasible_system_has_no_vertices() {
        let lp = DenseLp::new(vec![1.0], vec![vec![0.0]], vec![-1.0], vec![1.0]).unwrap();
        assert!(enumerate_vertices(&lp, 100).unwrap().is_empty());
    }

    #[test]
    fn limit_is_enforced() {
        let lp = example_lp([1.0, 1.0]);
        assert!(matches!(
            enumerate_vertices(&lp, 10),
            Err(LpError::TooManyCandidates {
                candidates: 56,
                limit: 10
            })
        ));
        assert!(matches!(
            enumerate_dual_bfs(&lp, 10),
            Err(LpError::TooManyCandidates { .. })
        ));
    }

    #[test]
    fn one_variable_dual_bfs() {
        let d = enumerate_dual_bfs(&one_var(), 100).unwrap();
        let has = |l: f64, g: f64| {
            d.iter()
                .any(|b| (b.lambda[0] - l).abs() < 1e-12 && (b.gamma[0] - g).abs() < 1e-12)
        };
        assert!(has(2.0, 0.0));
        assert!(has(0.0, 1.0));
    }

    #[test]
    fn example_dual_bfs_contains_optimal_prices() {
        let d = enumerate_dual_bfs(&example_lp([1.0, 1.0]), 1_000).unwrap();
        assert!(d.iter().any(|b| (b.lambda[0] - 7.0 / 15.0).abs() < 1e-12
            && (b.lambda[1] - 4.0 / 15.0).abs() < 1e-12));
        let best = d.iter().map(|b| b.objective).fold(f64::INFINITY, f64::min);
        assert!((best - 0.76).abs() < 1e-12);
    }

    #[test]
    fn zero_objective_dual_has_origin() {
        let lp = DenseLp::new(
            vec![0.0, 0.0],
            vec![vec![0.5, 1.0]],
            vec![1.0],
            vec![1.0; 2],
        )
        .unwrap();
        let d = enumerate_dual_bfs(&lp, 100).unwrap();
        assert!(d
            .iter()
            .any(|b| b.lambda.iter().chain(&b.gamma).all(|&v| v == 0.0)));
    }

    #[test]
    fn standard_form_bfs_matches_vertices() {
        let lp = example_lp([1.0, 1.0]);
        let sf = to_standard_form(&lp);
        let bfs = enumerate_standard_form_bfs(&sf, 1_000).unwrap();
        let v = enumerate_vertices(&lp, 1_000).unwrap();
        assert_eq!(bfs.len(), v.len());
        assert!((max_objective(&bfs) - max_objective(&v)).abs() < 1e-12);
    }
}
