use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parametrized;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Moment estimates of the Adam optimizer for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S = f64> {
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    /// Zeroed moments shaped like `model`'s parameters.
    pub fn new<P: Parametrized<S> + ?Sized>(model: &P, config: AdamConfig) -> Self {
        let zeros: Vec<_> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            config,
        }
    }

    /// One bias-corrected Adam update of `model` followed by its projection.
    ///
    /// Gradients are validated before anything is modified; a non-finite
    /// entry aborts with the parameter name.
    pub fn step<P: Parametrized<S> + ?Sized>(&mut self, model: &mut P, grads: &[Tensor<S>]) -> Result<()> {
        let names = model.param_names();
        if grads.len() != self.m.len() || names.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        for ((g, m), name) in grads.iter().zip(&self.m).zip(&names) {
            if g.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "gradient of {name} has shape {:?}, expected {:?}",
                    g.shape(),
                    m.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }

        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bc1 = S::one() - S::of(c.beta1.powi(self.step as i32));
        let bc2 = S::one() - S::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (S::of(c.lr), S::of(c.eps));
        let one = S::one();

        for (((p, g), m), v) in model
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1 * md[i] + (one - b1) * gi;
                vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        model.project();
        Ok(())
    }
}
