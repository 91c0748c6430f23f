use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating point element type. `f32` is used for training and inference,
/// `f64` for gradient verification.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const DTYPE: &'static str;

    /// Raw strided product `c = a·b + beta·c` where `c` is row-major `m×n`.
    ///
    /// # Safety
    /// The strides must keep every addressed element of `a` (m×k) and `b` (k×n)
    /// inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
    );

    /// Appends the little-endian bytes of the value.
    fn extend_le(self, buf: &mut Vec<u8>);

    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn extend_le(self, buf: &mut Vec<u8>) {
                buf.extend_from_slice(&self.to_le_bytes());
            }

            unsafe fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
            ) {
                debug_assert_eq!(c.len(), m * n);
                if m == 0 || n == 0 {
                    return;
                }
                $gemm(
                    m, k, n, 1.0, a.as_ptr(), a_strides.0, a_strides.1, b.as_ptr(), b_strides.0,
                    b_strides.1, beta, c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// `c (+)= a·b` with `a: m×k`, `b: k×n`, all row-major.
pub(crate) fn mm<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], acc: bool) {
    assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    let beta = if acc { F::one() } else { F::zero() };
    // SAFETY: lengths asserted; strides are the natural row-major ones.
    unsafe { F::gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), beta, c) }
}

/// `c += a·bᵀ` with `a: m×k`, `b: n×k`.
pub(crate) fn mm_bt_acc<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n);
    // SAFETY: bᵀ addressed through swapped strides of a row-major n×k buffer.
    unsafe { F::gemm_strided(m, k, n, a, (k as isize, 1), b, (1, k as isize), F::one(), c) }
}

/// `c += aᵀ·b` with `a: k×m`, `b: k×n`.
pub(crate) fn mm_at_acc<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F]) {
    assert!(a.len() == k * m && b.len() == k * n && c.len() == m * n);
    // SAFETY: aᵀ addressed through swapped strides of a row-major k×m buffer.
    unsafe { F::gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), F::one(), c) }
}
