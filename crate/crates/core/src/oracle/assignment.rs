//! Exact linear assignment by successive shortest augmenting paths with
//! dual potentials (the O(m^3) Hungarian scheme).

use super::{check_clouds, cost_matrix, sq_dist, EmpiricalCoupling, Plan};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Minimum-cost perfect matching for a dense `m x m` cost matrix.
///
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn solve_assignment<S: Scalar>(cost: &[S], m: usize) -> Vec<usize> {
    assert_eq!(cost.len(), m * m, "cost matrix must be m x m");
    if m == 0 {
        return Vec::new();
    }
    let inf = S::infinity();
    // 1-based; column 0 is the virtual source of each augmentation
    // start from row- then column-reduced duals; any feasible start is valid
    // and this one shortens the augmenting paths considerably
    let mut u = vec![S::zero(); m + 1];
    let mut v = vec![inf; m + 1];
    v[0] = S::zero();
    for i in 1..=m {
        let row = &cost[(i - 1) * m..i * m];
        u[i] = row.iter().copied().fold(inf, |a, b| if b < a { b } else { a });
        for j in 1..=m {
            let r = row[j - 1] - u[i];
            if r < v[j] {
                v[j] = r;
            }
        }
    }
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![inf; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=m {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * m..i0 * m];
            let ui0 = u[i0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; m];
    for j in 1..=m {
        perm[owner[j] - 1] = j - 1;
    }
    perm
}

fn centered<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let mean = x.col_sum().scale(S::of(-1.0 / x.rows() as f64));
    x.add_row(&mean)
}

/// Optimal matching between two equal-size clouds.
///
/// Centering both clouds only adds per-row and per-column constants to the
/// cost, which every perfect matching pays equally, so the matching is
/// solved on centered copies and costed on the originals. This keeps the
/// augmenting paths short when the clouds are far apart.
pub fn optimal_coupling<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<EmpiricalCoupling<S>> {
    let (m, _) = check_clouds(x, y)?;
    let perm = solve_assignment(&cost_matrix(&centered(x)?, &centered(y)?)?, m);
    let total: S = perm.iter().enumerate().map(|(i, &j)| sq_dist(x.row(i), y.row(j))).sum();
    Ok(EmpiricalCoupling {
        cost: total / S::of(m as f64),
        plan: Plan::Permutation(perm),
    })
}

/// Exact empirical squared 2-Wasserstein distance.
pub fn w2sq_assignment<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<S> {
    Ok(optimal_coupling(x, y)?.cost)
}
