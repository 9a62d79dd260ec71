//! Transport-cost error and target-distribution error of a trained model.
//!
//! ```text
//! D_cost   = | W2^2(mu, nu) - mean |T(x) - x|^2 |
//! D_target = W2^2(T#mu, nu)
//! ```
//!
//! Both are estimated from batches of `n` samples and averaged over
//! `repeats` independent draws. `T(x)` is the full evaluation-time
//! composition: `x` is smoothed at `eps_eval`, pushed through the network,
//! and the displacement is measured from the clean `x`. Evaluation noise is
//! redrawn in every repeat.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DatasetPair;
use crate::error::{Error, Result};
use crate::oracle::w2sq_assignment;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{transport, ModelPair};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Batch size per repeat.
    pub n: usize,
    pub repeats: usize,
    pub eps_eval: f64,
    /// Sample size for the oracle estimate of `W2^2(mu, nu)` when no closed
    /// form exists; `None` disables the fallback.
    pub oracle_fallback: Option<usize>,
}

impl EvalProtocol {
    pub const DEFAULT_N: usize = 1024;
    pub const DEFAULT_REPEATS: usize = 10;
    pub const DEFAULT_ORACLE_N: usize = 4096;

    pub fn new(eps_eval: f64) -> Self {
        Self {
            n: Self::DEFAULT_N,
            repeats: Self::DEFAULT_REPEATS,
            eps_eval,
            oracle_fallback: Some(Self::DEFAULT_ORACLE_N),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.repeats == 0 {
            return Err(Error::Config("evaluation needs n >= 1 and repeats >= 1".into()));
        }
        if !(self.eps_eval >= 0.0) || !self.eps_eval.is_finite() {
            return Err(Error::Config(format!("eps_eval must be finite and >= 0, got {}", self.eps_eval)));
        }
        if self.oracle_fallback == Some(0) {
            return Err(Error::Config("oracle fallback sample size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Analytic,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub d_cost: f64,
    pub d_target: f64,
    pub d_cost_std: f64,
    pub d_target_std: f64,
    pub n_samples: usize,
    pub repeats: usize,
    pub eps_eval: f64,
    pub reference_w2sq: f64,
    pub reference_source: ReferenceSource,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `W2^2(mu, nu)`, closed form when known, otherwise the assignment value
/// between `fallback` source and target samples.
pub fn reference_cost<R: Rng + ?Sized>(
    pair: &DatasetPair,
    fallback: Option<usize>,
    rng: &mut R,
) -> Result<(f64, ReferenceSource)> {
    match pair.reference_w2sq() {
        Ok(v) => Ok((v, ReferenceSource::Analytic)),
        Err(Error::Unsupported(why)) => {
            let Some(m) = fallback else {
                return Err(Error::Unsupported(format!("{why}; oracle fallback disabled")));
            };
            let x: Tensor = pair.source.sample(m, rng)?;
            let y: Tensor = pair.target.sample(m, rng)?;
            Ok((w2sq_assignment(&x, &y)?, ReferenceSource::Oracle))
        }
        Err(e) => Err(e),
    }
}

/// Mean squared displacement `|T(x) - x|^2` over one batch.
pub fn mean_displacement<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    x: &Tensor<S>,
    eps_eval: f64,
    rng: &mut R,
) -> Result<f64> {
    let tx = transport(model, x, rng, eps_eval)?;
    Ok(tx.sub(x)?.row_norm_sq().mean().as_f64())
}

fn cost_samples<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    pair: &DatasetPair,
    reference: f64,
    proto: &EvalProtocol,
    rng: &mut R,
) -> Result<Vec<f64>> {
    (0..proto.repeats)
        .map(|_| {
            let x = pair.source.sample(proto.n, rng)?;
            Ok((reference - mean_displacement(model, &x, proto.eps_eval, rng)?).abs())
        })
        .collect()
}

fn target_samples<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    pair: &DatasetPair,
    proto: &EvalProtocol,
    rng: &mut R,
) -> Result<Vec<f64>> {
    (0..proto.repeats)
        .map(|_| {
            let x: Tensor<S> = pair.source.sample(proto.n, rng)?;
            let tx = transport(model, &x, rng, proto.eps_eval)?;
            let y = pair.target.sample(proto.n, rng)?;
            Ok(w2sq_assignment(&tx.cast::<f64>(), &y)?)
        })
        .collect()
}

/// `D_cost` averaged over repeats.
pub fn d_cost<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    pair: &DatasetPair,
    proto: &EvalProtocol,
    rng: &mut R,
) -> Result<f64> {
    proto.validate()?;
    check_dims(model, pair)?;
    let (reference, _) = reference_cost(pair, proto.oracle_fallback, rng)?;
    Ok(mean_std(&cost_samples(model, pair, reference, proto, rng)?).0)
}

/// `D_target` averaged over repeats.
pub fn d_target<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    pair: &DatasetPair,
    proto: &EvalProtocol,
    rng: &mut R,
) -> Result<f64> {
    proto.validate()?;
    check_dims(model, pair)?;
    Ok(mean_std(&target_samples(model, pair, proto, rng)?).0)
}

fn check_dims<S: Scalar>(model: &ModelPair<S>, pair: &DatasetPair) -> Result<()> {
    if model.dim() != pair.dim() {
        return Err(Error::Config(format!(
            "model dimension {} differs from data dimension {}",
            model.dim(),
            pair.dim()
        )));
    }
    Ok(())
}

/// Both metrics with their spread and the reference used.
pub fn evaluate<S: Scalar, R: Rng + ?Sized>(
    model: &ModelPair<S>,
    pair: &DatasetPair,
    proto: &EvalProtocol,
    rng: &mut R,
) -> Result<MetricReport> {
    proto.validate()?;
    check_dims(model, pair)?;
    let (reference, source) = reference_cost(pair, proto.oracle_fallback, rng)?;
    let (d_cost, d_cost_std) = mean_std(&cost_samples(model, pair, reference, proto, rng)?);
    let (d_target, d_target_std) = mean_std(&target_samples(model, pair, proto, rng)?);
    Ok(MetricReport {
        d_cost,
        d_target,
        d_cost_std,
        d_target_std,
        n_samples: proto.n,
        repeats: proto.repeats,
        eps_eval: proto.eps_eval,
        reference_w2sq: reference,
        reference_source: source,
    })
}

/// `W2^2` between two independent target batches of size `n`: the
/// finite-sample floor of `D_target`.
pub fn target_floor<R: Rng + ?Sized>(pair: &DatasetPair, n: usize, repeats: usize, rng: &mut R) -> Result<f64> {
    let vals = (0..repeats.max(1))
        .map(|_| {
            let a: Tensor = pair.target.sample(n, rng)?;
            let b: Tensor = pair.target.sample(n, rng)?;
            w2sq_assignment(&a, &b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&vals).0)
}
