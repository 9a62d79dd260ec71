//! Entropy-regularized transport via log-domain Sinkhorn iterations.
//!
//! The regularization is annealed geometrically from the cost scale down
//! to the requested value, warm-starting the dual potentials at each stage,
//! which keeps small regularizations (1e-3 against unit-scale costs)
//! tractable. The reported value is the transport cost of the entropic plan
//! without debiasing; it exceeds the exact value by at most
//! `O(epsilon * log m)`.

use super::{check_clouds, cost_matrix, EmpiricalCoupling, Plan};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    /// Iteration budget summed over all annealing stages.
    pub max_iter: usize,
    /// Required L1 violation of the row marginals at exit. The plan carries
    /// unit mass, so this bounds the cost error by `tol * max cost`.
    pub tol: f64,
    /// Multiplicative decrease of the regularization between stages.
    pub anneal: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iter: 100_000,
            tol: 1e-4,
            anneal: 0.5,
        }
    }
}

impl SinkhornOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

struct Duals {
    f: Vec<f64>,
    g: Vec<f64>,
}

/// One row sweep then one column sweep; returns the row-marginal violation.
fn sweep(c: &[f64], m: usize, eps: f64, log_w: f64, d: &mut Duals) -> f64 {
    for i in 0..m {
        let row = &c[i * m..(i + 1) * m];
        let lse = log_sum_exp(row.iter().zip(&d.g).map(|(&cij, &gj)| (gj - cij) / eps));
        d.f[i] = eps * (log_w - lse);
    }
    for j in 0..m {
        let lse = log_sum_exp((0..m).map(|i| (d.f[i] - c[i * m + j]) / eps));
        d.g[j] = eps * (log_w - lse);
    }
    let w = log_w.exp();
    (0..m)
        .map(|i| {
            let row = &c[i * m..(i + 1) * m];
            let mass: f64 = row
                .iter()
                .zip(&d.g)
                .map(|(&cij, &gj)| ((d.f[i] + gj - cij) / eps).exp())
                .sum();
            (mass - w).abs()
        })
        .sum()
}

/// Entropic coupling between two uniformly weighted clouds of equal size.
pub fn sinkhorn_coupling<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, opts: &SinkhornOptions) -> Result<EmpiricalCoupling<S>> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::Contract(format!(
            "sinkhorn regularization must be positive, got {}",
            opts.epsilon
        )));
    }
    if !(opts.anneal > 0.0 && opts.anneal < 1.0) {
        return Err(Error::Contract("annealing factor must lie in (0, 1)".into()));
    }
    let (m, _) = check_clouds(x, y)?;
    let c: Vec<f64> = cost_matrix(x, y)?.into_iter().map(S::as_f64).collect();
    let log_w = -(m as f64).ln();
    let mut duals = Duals {
        f: vec![0.0; m],
        g: vec![0.0; m],
    };

    let scale = c.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut eps = scale.max(opts.epsilon);
    let mut iters = 0usize;
    let mut violation = f64::INFINITY;
    loop {
        let last_stage = eps <= opts.epsilon;
        let stage_tol = if last_stage { opts.tol } else { opts.tol.max(1e-3) };
        loop {
            if iters >= opts.max_iter {
                return Err(Error::NotConverged { iters, violation });
            }
            violation = sweep(&c, m, eps, log_w, &mut duals);
            iters += 1;
            if violation < stage_tol {
                break;
            }
        }
        if last_stage {
            break;
        }
        eps = (eps * opts.anneal).max(opts.epsilon);
    }

    let mut plan = vec![S::zero(); m * m];
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let p = ((duals.f[i] + duals.g[j] - c[i * m + j]) / eps).exp();
            plan[i * m + j] = S::of(p);
            total += p * c[i * m + j];
        }
    }
    Ok(EmpiricalCoupling {
        cost: S::of(total),
        plan: Plan::Dense(Tensor::raw(vec![m, m], plan)),
    })
}

/// Transport cost of the entropic plan at regularization `epsilon`.
pub fn w2sq_sinkhorn<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, opts: &SinkhornOptions) -> Result<S> {
    Ok(sinkhorn_coupling(x, y, opts)?.cost)
}
