//! Fully connected networks: the plain MLP used for transport maps and
//! potentials, and the input-convex variant for convex-residual potentials.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.2;

    pub fn slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(s) => s,
        }
    }

    pub fn apply<S: Scalar>(self, v: S) -> S {
        if v > S::zero() {
            v
        } else {
            v * S::of(self.slope())
        }
    }

    /// Derivative at `v`, taking the left limit at 0.
    pub fn derivative<S: Scalar>(self, v: S) -> S {
        if v > S::zero() {
            S::one()
        } else {
            S::of(self.slope())
        }
    }
}

/// Anything with a flat list of named trainable tensors.
pub trait Parametrized<S: Scalar> {
    fn params(&self) -> Vec<&Tensor<S>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<S>>;
    fn param_names(&self) -> Vec<String>;

    /// Restores parameter constraints after an optimizer step.
    fn project(&mut self) {}
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S = f64> {
    /// `[out x in]`
    pub weight: Tensor<S>,
    /// `[out]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Kaiming-uniform weights for ReLU fan-in, zero bias.
    pub fn kaiming<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim.max(1) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| S::of(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            weight: Tensor::raw(vec![out_dim, in_dim], data),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<S = f64> {
    pub layers: Vec<Linear<S>>,
    pub activation: Activation,
}

/// Tape handles for the weights and biases of an [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Handles in the same order as [`Parametrized::params`].
    pub fn flat(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

/// Intermediate results of a taped forward pass.
pub struct MlpTrace {
    pub output: Var,
    /// Pre-activation of every hidden layer.
    pub pre_activations: Vec<Var>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn new(layers: Vec<Linear<S>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.weight.require_matrix("layer weight")?;
            if l.bias.numel() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias has {} entries for {} outputs",
                    l.bias.numel(),
                    l.out_dim()
                )));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::LayerDim {
                    layer: i,
                    expected: layers[i - 1].out_dim(),
                    actual: l.in_dim(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    /// Randomly initialized network with widths `dims[0] -> ... -> dims[last]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::kaiming(w[0], w[1], rng))
            .collect();
        Self::new(layers, activation)
    }

    /// Single linear layer computing the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Linear {
                weight: Tensor::eye(dim),
                bias: Tensor::zeros(&[dim]),
            }],
            activation: Activation::Relu,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<()> {
        let (_, c) = input.require_matrix("network input")?;
        if c != self.in_dim() {
            return Err(Error::LayerDim {
                layer: 0,
                expected: self.in_dim(),
                actual: c,
            });
        }
        Ok(())
    }

    /// Untaped forward pass: affine then activation on every layer except
    /// the last, which stays linear.
    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.matmul(&l.weight, false, true)?.add_row(&l.bias)?;
            if i < last {
                let act = self.activation;
                h = h.map(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    /// Puts every weight and bias on the tape, as parameters when
    /// `trainable` and as constants otherwise.
    pub fn register(&self, tape: &mut Tape<S>, trainable: bool) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            if trainable {
                weights.push(tape.param(l.weight.clone()));
                biases.push(tape.param(l.bias.clone()));
            } else {
                weights.push(tape.constant(l.weight.clone()));
                biases.push(tape.constant(l.bias.clone()));
            }
        }
        MlpVars { weights, biases }
    }

    pub fn forward_taped(&self, tape: &mut Tape<S>, vars: &MlpVars, input: Var) -> Result<MlpTrace> {
        self.check_input(tape.value(input))?;
        let slope = S::of(self.activation.slope());
        let last = self.layers.len() - 1;
        let mut h = input;
        let mut pre_activations = Vec::with_capacity(last);
        for i in 0..=last {
            let z = tape.linear(h, vars.weights[i], vars.biases[i])?;
            if i < last {
                pre_activations.push(z);
                h = tape.rectify(z, slope);
            } else {
                h = z;
            }
        }
        Ok(MlpTrace {
            output: h,
            pre_activations,
        })
    }

    /// Taped gradient of a scalar-output network with respect to its input,
    /// one row per sample.
    ///
    /// The activation derivative is piecewise constant, so it enters as a
    /// fixed mask and the result stays differentiable in the weights.
    pub fn input_grad_taped(&self, tape: &mut Tape<S>, vars: &MlpVars, trace: &MlpTrace) -> Result<Var> {
        if self.out_dim() != 1 {
            return Err(Error::Contract(format!(
                "input gradient needs a scalar network, output width is {}",
                self.out_dim()
            )));
        }
        let batch = tape.value(trace.output).rows();
        let mut g = tape.constant(Tensor::full(&[batch, 1], S::one()));
        for i in (0..self.layers.len()).rev() {
            g = tape.matmul(g, vars.weights[i], false, false)?;
            if i > 0 {
                let mask = activation_mask(tape.value(trace.pre_activations[i - 1]), self.activation);
                let m = tape.constant(mask);
                g = tape.mul(g, m)?;
            }
        }
        Ok(g)
    }
}

fn activation_mask<S: Scalar>(pre: &Tensor<S>, act: Activation) -> Tensor<S> {
    pre.map(|v| act.derivative(v))
}

impl<S: Scalar> Parametrized<S> for MlpParams<S> {
    fn params(&self) -> Vec<&Tensor<S>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layers.{i}.weight"), format!("layers.{i}.bias")])
            .collect()
    }
}

/// Free-function form of [`MlpParams::forward`].
pub fn mlp_forward<S: Scalar>(params: &MlpParams<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    params.forward(input)
}

/// Potential `V(y) = alpha * |y|^2 - f(y)` with `f` input-convex.
///
/// `f` is built on `base`: the first layer reads the input freely, every
/// later layer mixes the previous hidden state through non-negative
/// weights and re-reads the input through an unconstrained `skip` matrix.
/// With a convex non-decreasing activation this makes `f` convex in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcnnParams<S = f64> {
    pub base: MlpParams<S>,
    /// `skip[l - 1]` is the `[out_l x in]` input matrix of base layer `l`.
    pub skip: Vec<Tensor<S>>,
    pub alpha: S,
}

#[derive(Clone, Debug)]
pub struct IcnnVars {
    pub base: MlpVars,
    pub skip: Vec<Var>,
}

impl IcnnVars {
    pub fn flat(&self) -> Vec<Var> {
        let mut v = self.base.flat();
        v.extend(&self.skip);
        v
    }
}

impl<S: Scalar> IcnnParams<S> {
    pub fn new(base: MlpParams<S>, skip: Vec<Tensor<S>>, alpha: S) -> Result<Self> {
        if !(alpha > S::zero()) {
            return Err(Error::Config(format!("ICNN cost scale must be positive, got {alpha}")));
        }
        if base.out_dim() != 1 {
            return Err(Error::Config("ICNN must have a scalar output".into()));
        }
        let act = base.activation.slope();
        if !(0.0..1.0).contains(&act) {
            return Err(Error::Config(format!(
                "ICNN activation must be convex and non-decreasing, slope {act}"
            )));
        }
        if skip.len() + 1 != base.layers.len() {
            return Err(Error::Shape(format!(
                "{} skip matrices for {} layers",
                skip.len(),
                base.layers.len()
            )));
        }
        let d = base.in_dim();
        for (i, s) in skip.iter().enumerate() {
            let (r, c) = s.require_matrix("skip weight")?;
            if r != base.layers[i + 1].out_dim() || c != d {
                return Err(Error::Shape(format!(
                    "skip {i} is {r}x{c}, expected {}x{d}",
                    base.layers[i + 1].out_dim()
                )));
            }
        }
        let mut p = Self { base, skip, alpha };
        p.project();
        Ok(p)
    }

    /// Random initialization; constrained weights start at the magnitude of
    /// a Kaiming draw.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        activation: Activation,
        alpha: S,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut base = MlpParams::init(&dims, activation, rng)?;
        for l in base.layers.iter_mut().skip(1) {
            l.weight = l.weight.map(|v: S| v.abs());
        }
        let skip = dims[2..]
            .iter()
            .map(|&out| Linear::kaiming(in_dim, out, rng).weight)
            .collect();
        Self::new(base, skip, alpha)
    }

    pub fn in_dim(&self) -> usize {
        self.base.in_dim()
    }

    fn check_input(&self, y: &Tensor<S>) -> Result<()> {
        self.base.check_input(y)
    }

    /// The convex part `f(y)`, one value per row.
    pub fn convex_part(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(y)?;
        let act = self.base.activation;
        let last = self.base.layers.len() - 1;
        let l0 = &self.base.layers[0];
        let mut z = y.matmul(&l0.weight, false, true)?.add_row(&l0.bias)?;
        for i in 1..=last {
            z = z.map(|v| act.apply(v));
            let l = &self.base.layers[i];
            z = z
                .matmul(&l.weight, false, true)?
                .add(&y.matmul(&self.skip[i - 1], false, true)?)?
                .add_row(&l.bias)?;
        }
        z.reshape(&[y.rows()])
    }

    pub fn potential(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        let f = self.convex_part(y)?;
        let sq = y.row_norm_sq();
        sq.scale(self.alpha).sub(&f)
    }

    pub fn register(&self, tape: &mut Tape<S>, trainable: bool) -> IcnnVars {
        let base = self.base.register(tape, trainable);
        let skip = self
            .skip
            .iter()
            .map(|s| {
                if trainable {
                    tape.param(s.clone())
                } else {
                    tape.constant(s.clone())
                }
            })
            .collect();
        IcnnVars { base, skip }
    }

    /// Taped `f(y)` as a `[batch x 1]` column, plus hidden pre-activations.
    fn convex_taped(&self, tape: &mut Tape<S>, vars: &IcnnVars, y: Var) -> Result<MlpTrace> {
        self.check_input(tape.value(y))?;
        let slope = S::of(self.base.activation.slope());
        let last = self.base.layers.len() - 1;
        let mut z = tape.linear(y, vars.base.weights[0], vars.base.biases[0])?;
        let mut pre = Vec::with_capacity(last);
        for i in 1..=last {
            pre.push(z);
            let a = tape.rectify(z, slope);
            let hz = tape.matmul(a, vars.base.weights[i], false, true)?;
            let hy = tape.matmul(y, vars.skip[i - 1], false, true)?;
            let s = tape.add(hz, hy)?;
            z = tape.add_row(s, vars.base.biases[i])?;
        }
        Ok(MlpTrace {
            output: z,
            pre_activations: pre,
        })
    }

    /// Taped `V(y)` as a `[batch]` vector; also returns the trace of `f`.
    pub fn potential_taped(&self, tape: &mut Tape<S>, vars: &IcnnVars, y: Var) -> Result<(Var, MlpTrace)> {
        let trace = self.convex_taped(tape, vars, y)?;
        let batch = tape.value(y).rows();
        let f = tape.reshape(trace.output, &[batch])?;
        let sq = tape.row_norm_sq(y)?;
        let sq = tape.scale(sq, self.alpha);
        Ok((tape.sub(sq, f)?, trace))
    }

    /// Taped `grad_y V(y) = 2 alpha y - grad_y f(y)`.
    pub fn input_grad_taped(&self, tape: &mut Tape<S>, vars: &IcnnVars, y: Var, trace: &MlpTrace) -> Result<Var> {
        let batch = tape.value(y).rows();
        let last = self.base.layers.len() - 1;
        let mut g = tape.constant(Tensor::full(&[batch, 1], S::one()));
        let mut from_skip: Option<Var> = None;
        for i in (1..=last).rev() {
            let gs = tape.matmul(g, vars.skip[i - 1], false, false)?;
            from_skip = Some(match from_skip {
                Some(acc) => tape.add(acc, gs)?,
                None => gs,
            });
            g = tape.matmul(g, vars.base.weights[i], false, false)?;
            let mask = activation_mask(tape.value(trace.pre_activations[i - 1]), self.base.activation);
            let m = tape.constant(mask);
            g = tape.mul(g, m)?;
        }
        g = tape.matmul(g, vars.base.weights[0], false, false)?;
        if let Some(s) = from_skip {
            g = tape.add(g, s)?;
        }
        let two_alpha_y = tape.scale(y, self.alpha + self.alpha);
        tape.sub(two_alpha_y, g)
    }
}

impl<S: Scalar> Parametrized<S> for IcnnParams<S> {
    fn params(&self) -> Vec<&Tensor<S>> {
        let mut p = self.base.params();
        p.extend(self.skip.iter());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut p = self.base.params_mut();
        p.extend(self.skip.iter_mut());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.base.param_names();
        n.extend((1..self.base.layers.len()).map(|i| format!("skip.{i}.weight")));
        n
    }

    /// Clamps every hidden-to-hidden weight to be non-negative.
    fn project(&mut self) {
        for l in self.base.layers.iter_mut().skip(1) {
            for w in l.weight.data_mut() {
                if *w < S::zero() {
                    *w = S::zero();
                }
            }
        }
    }
}

/// Convenience wrapper over [`IcnnParams::potential`].
pub fn icnn_potential<S: Scalar>(params: &IcnnParams<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
    params.potential(y)
}

/// The potential network `V`: a plain scalar MLP or an ICNN-based form.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential<S = f64> {
    Mlp(MlpParams<S>),
    Icnn(IcnnParams<S>),
}

#[derive(Clone, Debug)]
pub enum PotentialVars {
    Mlp(MlpVars),
    Icnn(IcnnVars),
}

impl PotentialVars {
    pub fn flat(&self) -> Vec<Var> {
        match self {
            PotentialVars::Mlp(v) => v.flat(),
            PotentialVars::Icnn(v) => v.flat(),
        }
    }
}

/// Taped evaluation of `V` on a batch.
pub struct PotentialTrace {
    /// `[batch]` values.
    pub value: Var,
    trace: MlpTrace,
}

impl<S: Scalar> Potential<S> {
    pub fn in_dim(&self) -> usize {
        match self {
            Potential::Mlp(m) => m.in_dim(),
            Potential::Icnn(c) => c.in_dim(),
        }
    }

    /// `V` on every row of `y`.
    pub fn evaluate(&self, y: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Potential::Mlp(m) => {
                let out = m.forward(y)?;
                out.reshape(&[y.rows()])
            }
            Potential::Icnn(c) => c.potential(y),
        }
    }

    pub fn register(&self, tape: &mut Tape<S>, trainable: bool) -> PotentialVars {
        match self {
            Potential::Mlp(m) => PotentialVars::Mlp(m.register(tape, trainable)),
            Potential::Icnn(c) => PotentialVars::Icnn(c.register(tape, trainable)),
        }
    }

    pub fn evaluate_taped(&self, tape: &mut Tape<S>, vars: &PotentialVars, y: Var) -> Result<PotentialTrace> {
        let batch = tape.value(y).rows();
        match (self, vars) {
            (Potential::Mlp(m), PotentialVars::Mlp(v)) => {
                if m.out_dim() != 1 {
                    return Err(Error::Config(format!(
                        "potential must have scalar output, width is {}",
                        m.out_dim()
                    )));
                }
                let trace = m.forward_taped(tape, v, y)?;
                let value = tape.reshape(trace.output, &[batch])?;
                Ok(PotentialTrace { value, trace })
            }
            (Potential::Icnn(c), PotentialVars::Icnn(v)) => {
                let (value, trace) = c.potential_taped(tape, v, y)?;
                Ok(PotentialTrace { value, trace })
            }
            _ => Err(Error::Contract("potential/vars kind mismatch".into())),
        }
    }

    /// Taped `grad_y V(y)` as a `[batch x d]` matrix.
    pub fn input_grad_taped(
        &self,
        tape: &mut Tape<S>,
        vars: &PotentialVars,
        y: Var,
        eval: &PotentialTrace,
    ) -> Result<Var> {
        match (self, vars) {
            (Potential::Mlp(m), PotentialVars::Mlp(v)) => m.input_grad_taped(tape, v, &eval.trace),
            (Potential::Icnn(c), PotentialVars::Icnn(v)) => c.input_grad_taped(tape, v, y, &eval.trace),
            _ => Err(Error::Contract("potential/vars kind mismatch".into())),
        }
    }
}

impl<S: Scalar> Parametrized<S> for Potential<S> {
    fn params(&self) -> Vec<&Tensor<S>> {
        match self {
            Potential::Mlp(m) => m.params(),
            Potential::Icnn(c) => c.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Potential::Mlp(m) => m.params_mut(),
            Potential::Icnn(c) => c.params_mut(),
        }
    }

    fn param_names(&self) -> Vec<String> {
        match self {
            Potential::Mlp(m) => m.param_names(),
            Potential::Icnn(c) => c.param_names(),
        }
    }

    fn project(&mut self) {
        if let Potential::Icnn(c) = self {
            c.project();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = MlpParams::<f64>::identity(2);
        let x = mat(&[&[1.0, 2.0]]);
        assert_eq!(mlp_forward(&net, &x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let net = MlpParams::new(
            vec![
                Linear {
                    weight: Tensor::eye(2),
                    bias: Tensor::vector(vec![-3.0, -3.0]),
                },
                Linear {
                    weight: Tensor::eye(2),
                    bias: Tensor::zeros(&[2]),
                },
            ],
            Activation::Relu,
        )
        .unwrap();
        let out = mlp_forward(&net, &mat(&[&[1.0, 2.0]])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_reports_offending_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpParams::<f64>::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let err = net.forward(&Tensor::zeros(&[5, 2])).unwrap_err();
        assert_eq!(
            err,
            Error::LayerDim {
                layer: 0,
                expected: 3,
                actual: 2
            }
        );
        let bad = MlpParams::<f64>::new(
            vec![Linear::kaiming(3, 4, &mut rng), Linear::kaiming(5, 2, &mut rng)],
            Activation::Relu,
        );
        assert!(matches!(bad, Err(Error::LayerDim { layer: 1, .. })));
    }

    #[test]
    fn kaiming_init_has_zero_bias_and_bounded_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Linear::<f64>::kaiming(24, 10, &mut rng);
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_icnn_leaves_quadratic_term() {
        let base = MlpParams::new(
            vec![
                Linear {
                    weight: Tensor::zeros(&[3, 2]),
                    bias: Tensor::zeros(&[3]),
                },
                Linear {
                    weight: Tensor::zeros(&[1, 3]),
                    bias: Tensor::zeros(&[1]),
                },
            ],
            Activation::Relu,
        )
        .unwrap();
        let icnn = IcnnParams::new(base, vec![Tensor::zeros(&[1, 2])], 1.0).unwrap();
        let v = icnn_potential(&icnn, &mat(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(v.data(), &[2.0]);
    }

    #[test]
    fn icnn_rejects_nonpositive_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = IcnnParams::<f64>::init(2, &[4], Activation::Relu, 1.0, &mut rng).unwrap();
        let bad = IcnnParams::new(good.base.clone(), good.skip.clone(), -1.0);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn projection_clamps_hidden_weights_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut icnn = IcnnParams::<f64>::init(2, &[4, 4], Activation::Relu, 1.0, &mut rng).unwrap();
        icnn.base.layers[0].weight.data_mut()[0] = -5.0;
        icnn.base.layers[1].weight.data_mut()[0] = -5.0;
        icnn.skip[0].data_mut()[0] = -5.0;
        icnn.project();
        assert_eq!(icnn.base.layers[0].weight.data()[0], -5.0);
        assert_eq!(icnn.base.layers[1].weight.data()[0], 0.0);
        assert_eq!(icnn.skip[0].data()[0], -5.0);
    }

    #[test]
    fn taped_potential_matches_untaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Tensor::new(vec![6, 3], (0..18).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let pots = [
            Potential::Mlp(MlpParams::init(&[3, 8, 8, 1], Activation::LeakyRelu(0.2), &mut rng).unwrap()),
            Potential::Icnn(IcnnParams::init(3, &[8, 5], Activation::Relu, 0.7, &mut rng).unwrap()),
        ];
        for pot in pots {
            let mut tape = Tape::new();
            let vars = pot.register(&mut tape, true);
            let yv = tape.constant(y.clone());
            let tr = pot.evaluate_taped(&mut tape, &vars, yv).unwrap();
            let direct = pot.evaluate(&y).unwrap();
            for (a, b) in tape.value(tr.value).data().iter().zip(direct.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taped_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.91).cos()).collect()).unwrap();
        let pots = [
            Potential::Mlp(MlpParams::init(&[3, 7, 6, 1], Activation::LeakyRelu(0.2), &mut rng).unwrap()),
            Potential::Icnn(IcnnParams::init(3, &[7, 5], Activation::Relu, 0.5, &mut rng).unwrap()),
        ];
        let h = 1e-6;
        for pot in pots {
            let mut tape = Tape::new();
            let vars = pot.register(&mut tape, false);
            let yv = tape.constant(y.clone());
            let tr = pot.evaluate_taped(&mut tape, &vars, yv).unwrap();
            let g = pot.input_grad_taped(&mut tape, &vars, yv, &tr).unwrap();
            let g = tape.value(g).clone();
            for i in 0..y.numel() {
                let mut p = y.clone();
                p.data_mut()[i] += h;
                let mut m = y.clone();
                m.data_mut()[i] -= h;
                let row = i / 3;
                let fd = (pot.evaluate(&p).unwrap().data()[row] - pot.evaluate(&m).unwrap().data()[row]) / (2.0 * h);
                assert!((fd - g.data()[i]).abs() < 1e-6, "{fd} vs {}", g.data()[i]);
            }
        }
    }
}
