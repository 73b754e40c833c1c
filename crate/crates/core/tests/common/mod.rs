#![allow(dead_code)]

use fluidgate::lp::{self, DenseLp};
use fluidgate::market::{Market, OrderType};
use fluidgate::stability::FluidSolution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn example_market(b: [f64; 2]) -> Market {
    Market::new(
        vec![
            OrderType::single(1.0, vec![1.0, 2.0]),
            OrderType::single(1.2, vec![2.0, 1.0]),
            OrderType::single(0.8, vec![1.0, 1.0]),
        ],
        vec![0.3, 0.3, 0.4],
        b.to_vec(),
        1000,
        true,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (head, tail) = a.split_at_mut(q);
                for (apk, aqk) in head[p].iter_mut().zip(tail[0].iter_mut()) {
                    let (x, y) = (*apk, *aqk);
                    *apk = c * x - s * y;
                    *aqk = s * x + c * y;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Smallest singular value of a square matrix, via the eigenvalues of
/// `M^T M`.
pub fn smallest_singular_value(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum())
                .collect()
        })
        .collect();
    jacobi_eigenvalues(gram)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt()
}

/// Random LP `max c^T y, A y <= b, 0 <= y <= u` with small entries.
pub fn random_lp(r: &mut ChaCha8Rng) -> DenseLp {
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=3);
    let objective = (0..n).map(|_| r.random_range(-0.2..1.0)).collect();
    let matrix = (0..m)
        .map(|_| (0..n).map(|_| r.random_range(0.0..1.0)).collect())
        .collect();
    let rhs = (0..m).map(|_| r.random_range(0.0..1.5)).collect();
    let upper = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
    DenseLp::new(objective, matrix, rhs, upper).unwrap()
}

/// Random scalar market with entries in `[0, 1]`.
pub fn random_market(r: &mut ChaCha8Rng) -> Market {
    let n = r.random_range(2..=4);
    let m = r.random_range(1..=3);
    let types = (0..n)
        .map(|_| {
            OrderType::single(
                r.random_range(0.05..1.0),
                (0..m).map(|_| r.random_range(0.05..1.0)).collect(),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    let b = (0..m).map(|_| r.random_range(0.05..0.6)).collect();
    Market::new(types, p, b, 1000, false).unwrap()
}

/// Random market whose fluid LP has a unique nondegenerate optimum.
pub fn random_nondegenerate_market(r: &mut ChaCha8Rng) -> Market {
    loop {
        let m = random_market(r);
        if FluidSolution::new(&m).is_ok_and(|f| f.is_nondegenerate()) {
            return m;
        }
    }
}

pub fn solve_value(lp: &DenseLp) -> f64 {
    lp::solve(lp).unwrap().objective_value
}
