//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records each elementary tensor operation together with its
//! result. [`Tape::backward`] then walks the records in reverse and
//! accumulates adjoints. The tape is rebuilt for every optimization step.
//!
//! Nodes created with [`Tape::constant`] never receive gradients, and any
//! node whose inputs are all constant is itself constant, so the backward
//! pass skips the corresponding products entirely.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    /// Leaky rectifier; slope 0 is the plain ReLU.
    Rectify {
        x: Var,
        slope: S,
    },
    RowNormSq(Var),
    Mean(Var),
    Reshape(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

pub struct Tape<S = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that is held fixed.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b), trans_a, trans_b)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
            },
            rg,
        ))
    }

    /// `x * w^T + b` for a weight stored as `[out x in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight, false, true)?;
        self.add_row(h, bias)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let value = self.value(x).add_row(self.value(row))?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::AddRow { x, row }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn rectify(&mut self, x: Var, slope: S) -> Var {
        let value = self.value(x).map(|v| if v > S::zero() { v } else { v * slope });
        let rg = self.rg(x);
        self.push(value, Op::Rectify { x, slope }, rg)
    }

    /// `[rows x cols] -> [rows]`, squared norm of each row.
    pub fn row_norm_sq(&mut self, x: Var) -> Result<Var> {
        self.value(x).require_matrix("row_norm_sq input")?;
        let value = self.value(x).row_norm_sq();
        let rg = self.rg(x);
        Ok(self.push(value, Op::RowNormSq(x), rg))
    }

    /// Mean of all entries, as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node reachable from `loss` that depends on a parameter gets an
    /// adjoint; [`Gradients::get`] returns zeros for the rest.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(lv.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul {
                    a,
                    b,
                    trans_a,
                    trans_b,
                } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        let da = if *trans_a {
                            bv.matmul(&g, *trans_b, true)?
                        } else {
                            g.matmul(bv, false, !*trans_b)?
                        };
                        accumulate(&mut adj, *a, da);
                    }
                    if self.rg(*b) {
                        let db = if *trans_b {
                            g.matmul(av, true, *trans_a)?
                        } else {
                            av.matmul(&g, !*trans_a, false)?
                        };
                        accumulate(&mut adj, *b, db);
                    }
                }
                Op::AddRow { x, row } => {
                    if self.rg(*row) {
                        let db = g.col_sum().reshape(self.value(*row).shape())?;
                        accumulate(&mut adj, *row, db);
                    }
                    if self.rg(*x) {
                        accumulate(&mut adj, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g.scale(-S::one()));
                    }
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut adj, *a, g.mul(self.value(*b))?);
                    }
                    if self.rg(*b) {
                        accumulate(&mut adj, *b, g.mul(self.value(*a))?);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::Rectify { x, slope } => {
                    let dx = g.zip_map(self.value(*x), |gv, xv| {
                        if xv > S::zero() {
                            gv
                        } else {
                            gv * *slope
                        }
                    })?;
                    accumulate(&mut adj, *x, dx);
                }
                Op::RowNormSq(x) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = xv.data().to_vec();
                    for (chunk, &gr) in dx.chunks_mut(c).zip(g.data()) {
                        for v in chunk {
                            *v = *v * (gr + gr);
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::raw(xv.shape().to_vec(), dx));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let share = g.data()[0] / S::of(xv.numel() as f64);
                    accumulate(&mut adj, *x, Tensor::full(xv.shape(), share));
                }
                Op::Reshape(x) => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    accumulate(&mut adj, *x, dx);
                }
            }
        }
        Ok(Gradients { adj })
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<S = f64> {
    adj: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `v`; zeros when `v` does not influence the
    /// loss.
    pub fn get(&self, tape: &Tape<S>, v: Var) -> Tensor<S> {
        match self.adj.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(tape.value(v).shape()),
        }
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, tape: &Tape<S>, v: Var) -> Tensor<S> {
        match self.adj.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn(&Tensor) -> f64, x: &Tensor, grad: &Tensor) {
        let h = 1e-6;
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let g = grad.data()[i];
            assert!((fd - g).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn linear_map_gradient_is_outer_structure() {
        // loss = sum(W x) over a batch; dL/dW[o][i] = sum_b x[b][i]
        let x: Tensor = Tensor::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]).unwrap();
        let w = Tensor::from_rows(&[[0.1, 0.2, 0.3], [0.4, -0.5, 0.6]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(w);
        let y = tape.matmul(xv, wv, false, true).unwrap();
        let m = tape.mean(y);
        let loss = tape.scale(m, 4.0);
        let g = tape.backward(loss).unwrap().get(&tape, wv);
        let colsum = x.col_sum();
        for o in 0..2 {
            for i in 0..3 {
                assert!((g.get(o, i) - colsum.data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let m = tape.mean(a);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(&tape, unused), Tensor::zeros(&[1, 2]));
        assert_eq!(grads.get(&tape, a).data(), &[0.5, 0.5]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_do_not_propagate() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let m = tape.mean(a);
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(&tape, a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn composite_expression_matches_finite_differences() {
        let a0 = Tensor::from_rows(&[[0.3, -1.2], [0.7, 0.4], [-0.2, 0.9]]).unwrap();
        let b = Tensor::from_rows(&[[1.0, 0.5, -0.3], [0.2, -0.8, 0.6]]).unwrap();
        let bias = Tensor::vector(vec![0.1, -0.2, 0.05]);
        let eval = |a: &Tensor, grad: bool| -> (f64, Option<Tensor>) {
            let mut tape = Tape::new();
            let av = tape.param(a.clone());
            let bv = tape.constant(b.clone());
            let cv = tape.constant(bias.clone());
            // rows of leaky(a * b + c) with a transposed product and reuse of a
            let h = tape.matmul(av, bv, false, false).unwrap();
            let h = tape.add_row(h, cv).unwrap();
            let r = tape.rectify(h, 0.2);
            let p = tape.matmul(r, av, true, false).unwrap();
            let q = tape.mul(p, p).unwrap();
            let s = tape.sub(q, p).unwrap();
            let s = tape.add(s, p).unwrap();
            let n = tape.row_norm_sq(s).unwrap();
            let n = tape.reshape(n, &[3, 1]).unwrap();
            let loss = tape.mean(n);
            let v = tape.value(loss).item().unwrap();
            let g = grad.then(|| tape.backward(loss).unwrap().get(&tape, av));
            (v, g)
        };
        let (_, g) = eval(&a0, true);
        fd_check(|a| eval(a, false).0, &a0, &g.unwrap());
    }
}
