//! Synthetic source/target distributions with known transport structure.
//!
//! The four block families live in `R^d` with `d = 2n`; a point is split
//! into halves `(p1, p2)` of length `n` and `e1` is the first unit vector of
//! `R^n`:
//!
//! | family        | source `x`                 | target `y`                      |
//! |---------------|----------------------------|---------------------------------|
//! | Perpendicular | `x1 ~ U[-1,1]^n`, `x2 = 0` | `y1 = 0`, `y2 ~ U[-1,1]^n`      |
//! | Parallel      | same                       | `y1 ~ U[-1,1]^n`, `y2 = e1`     |
//! | OneToMany     | same                       | `y1 ~ U[-1,1]^n`, `y2 = +-e1`   |
//! | Grid          | `x1 ~ U`, `x2 = g e1`      | `y1 = g e1`, `y2 ~ U[-1,1]^n`   |
//!
//! with `g` uniform on `{-3/4, -1/4, 1/4, 3/4}`. All stored squared
//! Wasserstein values use the unit cost `|x - y|^2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::gaussian::{psd_sqrt, w2sq_gaussian};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GRID_LEVELS: [f64; 4] = [-0.75, -0.25, 0.25, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance.
    pub cov: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Perpendicular,
    Parallel,
    OneToMany,
    Grid,
    Gaussian { mean: Vec<f64>, cov: Vec<f64> },
    GaussianMixture { components: Vec<GaussianComponent> },
}

impl Family {
    pub fn is_block(&self) -> bool {
        matches!(
            self,
            Family::Perpendicular | Family::Parallel | Family::OneToMany | Family::Grid
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Perpendicular => "perpendicular",
            Family::Parallel => "parallel",
            Family::OneToMany => "one_to_many",
            Family::Grid => "grid",
            Family::Gaussian { .. } => "gaussian",
            Family::GaussianMixture { .. } => "gaussian_mixture",
        }
    }

    /// Parses one of the block family names; `multi_perpendicular` and
    /// `horizontal` are accepted as aliases.
    pub fn parse_block(name: &str) -> Result<Self> {
        match name {
            "perpendicular" => Ok(Family::Perpendicular),
            "parallel" | "horizontal" => Ok(Family::Parallel),
            "one_to_many" | "one-to-many" => Ok(Family::OneToMany),
            "grid" | "multi_perpendicular" => Ok(Family::Grid),
            other => Err(Error::Config(format!("unknown dataset family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub family: Family,
    pub dim: usize,
    pub role: Role,
}

fn check_gaussian(mean: &[f64], cov: &[f64], dim: usize) -> Result<()> {
    if mean.len() != dim || cov.len() != dim * dim {
        return Err(Error::Config(format!(
            "gaussian parameters do not match dimension {dim}"
        )));
    }
    if mean.iter().chain(cov).any(|v| !v.is_finite()) {
        return Err(Error::Config("gaussian parameters must be finite".into()));
    }
    let c = DMatrix::from_row_slice(dim, dim, cov);
    if (&c - c.transpose()).amax() > 1e-12 * (1.0 + c.amax()) {
        return Err(Error::Config("covariance is not symmetric".into()));
    }
    let min_eig = c.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < -1e-10 * (1.0 + c.amax()) {
        return Err(Error::Config(format!(
            "covariance is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

impl SyntheticDataset {
    pub fn new(family: Family, dim: usize, role: Role) -> Result<Self> {
        let ds = Self { family, dim, role };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        match &self.family {
            f if f.is_block() && self.dim % 2 != 0 => Err(Error::Config(format!(
                "{} needs an even dimension, got {}",
                f.name(),
                self.dim
            ))),
            Family::Gaussian { mean, cov } => check_gaussian(mean, cov, self.dim),
            Family::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::Config("mixture has no components".into()));
                }
                let mut total = 0.0;
                for c in components {
                    if !(c.weight > 0.0) {
                        return Err(Error::Config("mixture weights must be positive".into()));
                    }
                    total += c.weight;
                    check_gaussian(&c.mean, &c.cov, self.dim)?;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("mixture weights sum to {total}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Half dimension `n` of a block family.
    pub fn half(&self) -> usize {
        self.dim / 2
    }

    /// `count` i.i.d. draws as a `[count x dim]` matrix.
    pub fn sample<S: Scalar, R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Tensor<S>> {
        if count == 0 {
            return Err(Error::Contract("sample count must be at least 1".into()));
        }
        self.validate()?;
        let d = self.dim;
        let n = d / 2;
        let mut data = vec![0.0f64; count * d];
        match (&self.family, self.role) {
            (Family::Gaussian { mean, cov }, _) => {
                let root = psd_sqrt(&DMatrix::from_row_slice(d, d, cov));
                for row in data.chunks_mut(d) {
                    fill_gaussian(row, mean, &root, rng);
                }
            }
            (Family::GaussianMixture { components }, _) => {
                let roots: Vec<_> = components
                    .iter()
                    .map(|c| psd_sqrt(&DMatrix::from_row_slice(d, d, &c.cov)))
                    .collect();
                for row in data.chunks_mut(d) {
                    let mut u: f64 = rng.random();
                    let mut k = components.len() - 1;
                    for (i, c) in components.iter().enumerate() {
                        if u < c.weight {
                            k = i;
                            break;
                        }
                        u -= c.weight;
                    }
                    fill_gaussian(row, &components[k].mean, &roots[k], rng);
                }
            }
            (Family::Grid, Role::Source) => {
                for row in data.chunks_mut(d) {
                    fill_uniform(&mut row[..n], rng);
                    row[n] = GRID_LEVELS[rng.random_range(0..4)];
                }
            }
            (Family::Grid, Role::Target) => {
                for row in data.chunks_mut(d) {
                    row[0] = GRID_LEVELS[rng.random_range(0..4)];
                    fill_uniform(&mut row[n..], rng);
                }
            }
            (_, Role::Source) => {
                for row in data.chunks_mut(d) {
                    fill_uniform(&mut row[..n], rng);
                }
            }
            (Family::Perpendicular, Role::Target) => {
                for row in data.chunks_mut(d) {
                    fill_uniform(&mut row[n..], rng);
                }
            }
            (Family::Parallel, Role::Target) => {
                for row in data.chunks_mut(d) {
                    fill_uniform(&mut row[..n], rng);
                    row[n] = 1.0;
                }
            }
            (Family::OneToMany, Role::Target) => {
                for row in data.chunks_mut(d) {
                    fill_uniform(&mut row[..n], rng);
                    row[n] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                }
            }
        }
        Ok(Tensor::raw(
            vec![count, d],
            data.into_iter().map(S::of).collect(),
        ))
    }
}

fn fill_uniform<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    for v in out {
        *v = rng.random_range(-1.0..=1.0);
    }
}

fn fill_gaussian<R: Rng + ?Sized>(out: &mut [f64], mean: &[f64], root: &DMatrix<f64>, rng: &mut R) {
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| StandardNormal.sample(rng)));
    let x = root * z;
    for (i, v) in out.iter_mut().enumerate() {
        *v = mean[i] + x[i];
    }
}

/// A source/target pair of datasets in the same dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPair {
    pub source: SyntheticDataset,
    pub target: SyntheticDataset,
}

impl DatasetPair {
    pub fn new(source: SyntheticDataset, target: SyntheticDataset) -> Result<Self> {
        if source.dim != target.dim {
            return Err(Error::Config(format!(
                "source dimension {} differs from target dimension {}",
                source.dim, target.dim
            )));
        }
        source.validate()?;
        target.validate()?;
        Ok(Self { source, target })
    }

    /// Source and target roles of one block family.
    pub fn block(family: Family, dim: usize) -> Result<Self> {
        if !family.is_block() {
            return Err(Error::Config(format!("{} is not a block family", family.name())));
        }
        Self::new(
            SyntheticDataset::new(family.clone(), dim, Role::Source)?,
            SyntheticDataset::new(family, dim, Role::Target)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.source.dim
    }

    fn block_family(&self) -> Option<&Family> {
        (self.source.family == self.target.family
            && self.source.family.is_block()
            && self.source.role == Role::Source
            && self.target.role == Role::Target)
            .then_some(&self.source.family)
    }

    /// Exact squared 2-Wasserstein distance between source and target, when
    /// a closed form is known.
    pub fn reference_w2sq(&self) -> Result<f64> {
        reference_w2sq(&self.source, &self.target)
    }

    /// One draw from the optimal conditional plan given a source point.
    pub fn reference_conditional<S: Scalar, R: Rng + ?Sized>(&self, x: &[S], rng: &mut R) -> Result<Vec<S>> {
        reference_conditional(self, x, rng)
    }
}

pub fn reference_w2sq(source: &SyntheticDataset, target: &SyntheticDataset) -> Result<f64> {
    if source.dim != target.dim {
        return Err(Error::Contract("dataset dimensions differ".into()));
    }
    match (&source.family, &target.family) {
        (Family::Gaussian { mean: m1, cov: c1 }, Family::Gaussian { mean: m2, cov: c2 }) => {
            let d = source.dim;
            w2sq_gaussian(
                &DVector::from_column_slice(m1),
                &DMatrix::from_row_slice(d, d, c1),
                &DVector::from_column_slice(m2),
                &DMatrix::from_row_slice(d, d, c2),
            )
        }
        _ => {
            let pair = DatasetPair {
                source: source.clone(),
                target: target.clone(),
            };
            match pair.block_family() {
                // supports are orthogonal, so every coupling costs E|x|^2 + E|y|^2
                Some(Family::Perpendicular) => Ok(2.0 * source.half() as f64 / 3.0),
                // the second block always moves by a unit vector and the
                // first block can stay put
                Some(Family::Parallel) | Some(Family::OneToMany) => Ok(1.0),
                _ => Err(Error::Unsupported(format!(
                    "no analytic reference for {} -> {}",
                    source.family.name(),
                    target.family.name()
                ))),
            }
        }
    }
}

pub fn reference_conditional<S: Scalar, R: Rng + ?Sized>(
    pair: &DatasetPair,
    x: &[S],
    rng: &mut R,
) -> Result<Vec<S>> {
    let d = pair.dim();
    if x.len() != d {
        return Err(Error::Shape(format!("point of length {} in dimension {d}", x.len())));
    }
    let n = d / 2;
    match pair.block_family() {
        Some(Family::Parallel) => {
            let mut y = x[..n].to_vec();
            y.extend((0..n).map(|i| if i == 0 { S::one() } else { S::zero() }));
            Ok(y)
        }
        Some(Family::OneToMany) => {
            let sign = if rng.random_bool(0.5) { S::one() } else { -S::one() };
            let mut y = x[..n].to_vec();
            y.extend((0..n).map(|i| if i == 0 { sign } else { S::zero() }));
            Ok(y)
        }
        _ => Err(Error::Unsupported(format!(
            "no closed-form plan for {} -> {}",
            pair.source.family.name(),
            pair.target.family.name()
        ))),
    }
}

/// Applies [`reference_conditional`] to every row of a batch.
pub fn reference_transport<S: Scalar, R: Rng + ?Sized>(
    pair: &DatasetPair,
    x: &Tensor<S>,
    rng: &mut R,
) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(x.numel());
    for row in x.rows_iter() {
        data.extend(reference_conditional(pair, row, rng)?);
    }
    Tensor::new(x.shape().to_vec(), data)
}
