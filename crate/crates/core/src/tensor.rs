//! Dense row-major tensors.
//!
//! Tensors are immutable once built; operations return fresh tensors.
//! Most of the crate works with rank-2 `[rows x cols]` batches and rank-1
//! vectors, and the helpers here are written for those shapes.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f64> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Checked constructor: the element count must match the shape and
    /// every entry must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {i}")));
        }
        Ok(t)
    }

    /// Like [`Tensor::new`] but accepts non-finite entries.
    pub fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: S) -> Self {
        Self::raw(vec![], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Self::raw(shape.to_vec(), vec![v; n])
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self::raw(vec![data.len()], data)
    }

    /// Builds a `[rows x cols]` matrix from row slices.
    pub fn from_rows<R: AsRef<[S]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a rank-2 tensor (or length of a vector).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a rank-2 tensor; 1 for vectors and scalars.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks(self.cols().max(1))
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_parts(shape.to_vec(), self.data.clone())
    }

    pub fn require_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "{what} must be a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        self.same_shape(other, "zip")?;
        Ok(Self::raw(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.data.len() as f64)
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Matrix product `op(a) * op(b)` where `op` optionally transposes.
    pub fn matmul(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        let (ar, ac) = self.require_matrix("matmul lhs")?;
        let (br, bc) = other.require_matrix("matmul rhs")?;
        let (m, k, a_strides) = if trans_a {
            (ac, ar, (1, ac as isize))
        } else {
            (ar, ac, (ac as isize, 1))
        };
        let (k2, n, b_strides) = if trans_b {
            (bc, br, (1, bc as isize))
        } else {
            (br, bc, (bc as isize, 1))
        };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions {k} vs {k2} (shapes {:?}{} x {:?}{})",
                self.shape,
                if trans_a { "^T" } else { "" },
                other.shape,
                if trans_b { "^T" } else { "" },
            )));
        }
        let mut out = vec![S::zero(); m * n];
        gemm(
            m,
            k,
            n,
            S::one(),
            &self.data,
            a_strides,
            &other.data,
            b_strides,
            S::zero(),
            &mut out,
            (n as isize, 1),
        );
        Ok(Self::raw(vec![m, n], out))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        let (r, c) = self.require_matrix("add_row lhs")?;
        if row.numel() != c {
            return Err(Error::Shape(format!(
                "add_row: row of {} entries onto {r}x{c}",
                row.numel()
            )));
        }
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(Self::raw(self.shape.clone(), out))
    }

    /// Column sums of a matrix, as a vector.
    pub fn col_sum(&self) -> Self {
        let c = self.cols();
        let mut out = vec![S::zero(); c];
        for chunk in self.data.chunks(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        Self::vector(out)
    }

    /// Per-row squared Euclidean norm.
    pub fn row_norm_sq(&self) -> Self {
        Self::vector(
            self.rows_iter()
                .map(|r| r.iter().map(|&v| v * v).sum())
                .collect(),
        )
    }

    /// Concatenates two matrices with equal row counts side by side.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        let (r1, c1) = self.require_matrix("hcat lhs")?;
        let (r2, c2) = other.require_matrix("hcat rhs")?;
        if r1 != r2 {
            return Err(Error::Shape(format!("hcat rows {r1} vs {r2}")));
        }
        let mut data = Vec::with_capacity(r1 * (c1 + c2));
        for i in 0..r1 {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self::raw(vec![r1, c1 + c2], data))
    }

    /// Stacks two matrices with equal column counts vertically.
    pub fn vcat(&self, other: &Self) -> Result<Self> {
        let (r1, c1) = self.require_matrix("vcat lhs")?;
        let (r2, c2) = other.require_matrix("vcat rhs")?;
        if c1 != c2 {
            return Err(Error::Shape(format!("vcat cols {c1} vs {c2}")));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::raw(vec![r1 + r2, c1], data))
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::raw(vec![idx.len(), c], data)
    }

    /// Column range `[start, end)` of a matrix.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        let r = self.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for row in self.rows_iter() {
            data.extend_from_slice(&row[start..end]);
        }
        Self::raw(vec![r, end - start], data)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::raw(
            self.shape.clone(),
            self.data.iter().map(|&v| T::of(v.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_rejects_bad_element_count() {
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn constructor_rejects_nan() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::from_parts(vec![1], vec![f64::INFINITY]).is_ok());
    }

    #[test]
    fn matmul_all_transpose_combinations() {
        let a = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let ab = a.matmul(&b, false, false).unwrap();
        assert_eq!(ab.shape(), &[2, 2]);
        assert_eq!(ab.data(), &[4.0, 5.0, 10.0, 11.0]);

        let bt = Tensor::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&bt, false, true).unwrap(), ab);

        let at = Tensor::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]).unwrap();
        assert_eq!(at.matmul(&b, true, false).unwrap(), ab);
        assert_eq!(at.matmul(&bt, true, true).unwrap(), ab);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(a.matmul(&a, false, false).is_err());
    }

    #[test]
    fn f32_matmul() {
        let a = Tensor::<f32>::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let i = Tensor::<f32>::eye(2);
        assert_eq!(a.matmul(&i, false, false).unwrap(), a);
    }

    #[test]
    fn hcat_and_columns_invert() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[[5.0], [6.0]]).unwrap();
        let c = a.hcat(&b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.columns(0, 2), a);
        assert_eq!(c.columns(2, 3), b);
    }

    #[test]
    fn row_helpers() {
        let a = Tensor::from_rows(&[[3.0, 4.0], [1.0, 0.0]]).unwrap();
        assert_eq!(a.row_norm_sq().data(), &[25.0, 1.0]);
        assert_eq!(a.col_sum().data(), &[4.0, 4.0]);
        let b = a.add_row(&Tensor::vector(vec![1.0, -1.0])).unwrap();
        assert_eq!(b.data(), &[4.0, 3.0, 2.0, -1.0]);
    }
}
