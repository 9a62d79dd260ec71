//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// A real scalar usable as a tensor element: `f32` or `f64`.
///
/// Besides the usual float arithmetic, each scalar supplies a dense
/// matrix product kernel so that the generic code paths still hit an
/// optimized GEMM.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in
    /// elements. Callers must guarantee that every addressed element is in
    /// bounds, which [`gemm`] checks.
    #[allow(clippy::too_many_arguments)]
    fn gemm_kernel(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// Lossy conversion from `f64`, used for literals and sampled values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

fn max_offset(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm_kernel(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                // SAFETY: `gemm` has verified that the largest offset
                // addressed in each operand lies within its slice.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Bounds-checked entry point for [`Scalar::gemm_kernel`].
///
/// Strides must be non-negative.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    a_strides: (isize, isize),
    b: &[S],
    b_strides: (isize, isize),
    beta: S,
    c: &mut [S],
    c_strides: (isize, isize),
) {
    for s in [a_strides, b_strides, c_strides] {
        assert!(s.0 >= 0 && s.1 >= 0, "negative gemm stride");
    }
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > max_offset(m, n, c_strides), "gemm: output out of bounds");
    if k > 0 {
        assert!(a.len() > max_offset(m, k, a_strides), "gemm: lhs out of bounds");
        assert!(b.len() > max_offset(k, n, b_strides), "gemm: rhs out of bounds");
    }
    S::gemm_kernel(m, k, n, alpha, a, a_strides, b, b_strides, beta, c, c_strides);
}
