//! Noise schedules and the source-smoothing convolutions.
//!
//! Two perturbations are supported. Gaussian convolution adds `level * z`,
//! so its level is a standard deviation. The variance-preserving form
//! returns `sqrt(1 - level) * x + sqrt(level) * z`, so its level is a
//! variance in `[0, 1)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    GaussianConv,
    VariancePreserving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Linear interpolation from `sigma_max` to `sigma_min`, stepped every
    /// `period` iterations.
    GaussianConv,
    /// Exponential variance-preserving schedule.
    VariancePreserving,
    /// `sigma_min` at every iteration, applied as Gaussian convolution.
    Constant,
}

impl ScheduleKind {
    pub fn perturbation(self) -> Perturbation {
        match self {
            ScheduleKind::VariancePreserving => Perturbation::VariancePreserving,
            ScheduleKind::GaussianConv | ScheduleKind::Constant => Perturbation::GaussianConv,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian" | "gaussian_conv" => Ok(ScheduleKind::GaussianConv),
            "vp" | "variance_preserving" => Ok(ScheduleKind::VariancePreserving),
            "constant" => Ok(ScheduleKind::Constant),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::GaussianConv => "gaussian",
            ScheduleKind::VariancePreserving => "vp",
            ScheduleKind::Constant => "constant",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub period: usize,
    pub total: usize,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, sigma_max: f64, sigma_min: f64, period: usize, total: usize) -> Result<Self> {
        let s = Self {
            kind,
            sigma_max,
            sigma_min,
            period,
            total,
        };
        s.validate()?;
        Ok(s)
    }

    /// Level 0 for every iteration: no smoothing at all.
    pub fn none(total: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            sigma_max: 0.0,
            sigma_min: 0.0,
            period: 1,
            total,
        }
    }

    pub fn constant(level: f64, total: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            sigma_max: level,
            sigma_min: level,
            period: 1,
            total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_max.is_finite()) {
            return Err(Error::Config("noise levels must be finite".into()));
        }
        if self.sigma_min < 0.0 {
            return Err(Error::Config(format!("sigma_min must be >= 0, got {}", self.sigma_min)));
        }
        if self.kind != ScheduleKind::Constant && self.sigma_max < self.sigma_min {
            return Err(Error::Config(format!(
                "sigma_max {} is below sigma_min {}",
                self.sigma_max, self.sigma_min
            )));
        }
        if self.period == 0 {
            return Err(Error::Config("schedule period must be positive".into()));
        }
        if self.total == 0 {
            return Err(Error::Config("schedule length must be positive".into()));
        }
        Ok(())
    }

    pub fn perturbation(&self) -> Perturbation {
        self.kind.perturbation()
    }

    /// Noise level at iteration `k`.
    pub fn level_at(&self, k: usize) -> Result<f64> {
        if k >= self.total {
            return Err(Error::Contract(format!(
                "iteration {k} outside schedule of length {}",
                self.total
            )));
        }
        let block_start = self.period * (k / self.period);
        let frac = (block_start + 1) as f64 / self.total as f64;
        Ok(match self.kind {
            ScheduleKind::Constant => self.sigma_min,
            ScheduleKind::GaussianConv => (1.0 - frac) * self.sigma_max + frac * self.sigma_min,
            ScheduleKind::VariancePreserving => {
                let t = 1.0 - frac;
                1.0 - (-(self.sigma_max - self.sigma_min) / 2.0 * t * t - self.sigma_min * t).exp()
            }
        })
    }

    /// Smooths `x` at the level of iteration `k`.
    pub fn perturb<S: Scalar, R: Rng + ?Sized>(&self, x: &Tensor<S>, k: usize, rng: &mut R) -> Result<Tensor<S>> {
        perturb(x, self.perturbation(), self.level_at(k)?, rng)
    }
}

/// Smooths every row of `x` at an explicit noise level.
///
/// A zero level returns `x` unchanged and draws nothing from `rng`.
pub fn perturb<S: Scalar, R: Rng + ?Sized>(
    x: &Tensor<S>,
    kind: Perturbation,
    level: f64,
    rng: &mut R,
) -> Result<Tensor<S>> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::Config(format!("noise level must be finite and >= 0, got {level}")));
    }
    if kind == Perturbation::VariancePreserving && level >= 1.0 {
        return Err(Error::Config(format!(
            "variance-preserving level must be below 1, got {level}"
        )));
    }
    if level == 0.0 {
        return Ok(x.clone());
    }
    let (keep, noise) = match kind {
        Perturbation::GaussianConv => (1.0, level),
        Perturbation::VariancePreserving => ((1.0 - level).sqrt(), level.sqrt()),
    };
    let (keep, noise) = (S::of(keep), S::of(noise));
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            keep * v + noise * S::of(z)
        })
        .collect();
    Ok(Tensor::raw(x.shape().to_vec(), data))
}

/// Standard normal matrix of the given shape.
pub fn standard_normal<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| S::of(StandardNormal.sample(rng)))
        .collect();
    Tensor::raw(vec![rows, cols], data)
}
