//! Ground-truth optimal transport between equal-size, uniformly weighted
//! point clouds, plus the closed form between Gaussians.
//!
//! All values are squared 2-Wasserstein distances under the unit cost
//! `|x - y|^2`, i.e. the optimal mean squared displacement.

pub mod assignment;
pub mod gaussian;
pub mod sinkhorn;

pub use assignment::{solve_assignment, w2sq_assignment};
pub use gaussian::w2sq_gaussian;
pub use sinkhorn::{w2sq_sinkhorn, SinkhornOptions};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest cloud size accepted by [`w2sq_bruteforce`].
pub const BRUTEFORCE_MAX: usize = 8;

/// How mass moves between two clouds of `m` points each.
#[derive(Clone, Debug, PartialEq)]
pub enum Plan<S = f64> {
    /// Point `i` of the first cloud goes to point `perm[i]` of the second.
    Permutation(Vec<usize>),
    /// Row-major `m x m` matrix of transported mass.
    Dense(Tensor<S>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCoupling<S = f64> {
    /// Total cost `sum_ij plan_ij |x_i - y_j|^2`, with each point carrying
    /// mass `1/m`.
    pub cost: S,
    pub plan: Plan<S>,
}

pub(crate) fn check_clouds<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<(usize, usize)> {
    let (m, d) = x.require_matrix("first point cloud")?;
    let (m2, d2) = y.require_matrix("second point cloud")?;
    if m != m2 {
        return Err(Error::Contract(format!("point clouds have {m} and {m2} points")));
    }
    if d != d2 {
        return Err(Error::Contract(format!("point clouds have widths {d} and {d2}")));
    }
    if m == 0 {
        return Err(Error::Contract("point clouds are empty".into()));
    }
    Ok((m, d))
}

pub(crate) fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| {
            let t = u - v;
            t * t
        })
        .sum()
}

/// Dense row-major matrix of pairwise squared distances.
pub fn cost_matrix<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<Vec<S>> {
    let (m, _) = check_clouds(x, y)?;
    let mut c = Vec::with_capacity(m * m);
    for xi in x.rows_iter() {
        c.extend(y.rows_iter().map(|yj| sq_dist(xi, yj)));
    }
    Ok(c)
}

/// Exact value by enumerating all `m!` matchings; `m <= 8`.
pub fn w2sq_bruteforce<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<S> {
    let (m, _) = check_clouds(x, y)?;
    if m > BRUTEFORCE_MAX {
        return Err(Error::Contract(format!(
            "brute force refuses {m} points (limit {BRUTEFORCE_MAX})"
        )));
    }
    let c = cost_matrix(x, y)?;
    let total = |perm: &[usize]| -> S { perm.iter().enumerate().map(|(i, &j)| c[i * m + j]).sum() };

    // Heap's algorithm
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = total(&perm);
    let mut counters = vec![0usize; m];
    let mut i = 1;
    while i < m {
        if counters[i] < i {
            let swap = if i % 2 == 0 { 0 } else { counters[i] };
            perm.swap(swap, i);
            best = best.min(total(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok(best / S::of(m as f64))
}
