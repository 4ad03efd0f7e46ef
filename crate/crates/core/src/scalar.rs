//! Floating-point abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the linear algebra, networks and defenses are generic over.
///
/// Implemented for `f32` and `f64`. The only non-arithmetic hook is
/// [`Scalar::gemm`], which the two concrete types route to an optimized
/// kernel; everything else goes through `num-traits`.
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
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short type tag written into serialized artifacts.
    const NAME: &'static str;

    /// Relative tolerance the Jacobi solver drives the off-diagonal mass to.
    fn jacobi_tol() -> Self;

    /// `c = alpha * a * b + beta * c` on strided storage.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are in elements.
    /// Callers guarantee every addressed element lies inside its slice.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    ) {
        naive_gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }
}

/// Reference triple loop; also the fallback when no fast kernel exists.
#[allow(clippy::too_many_arguments)]
pub fn naive_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
            }
            let slot = &mut c[i * rsc + j * csc];
            *slot = if beta == T::zero() { alpha * acc } else { alpha * acc + beta * *slot };
        }
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! fast_gemm {
    ($ty:ty, $kernel:path) => {
        #[allow(clippy::too_many_arguments)]
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            alpha: $ty,
            a: &[$ty],
            rsa: usize,
            csa: usize,
            b: &[$ty],
            rsb: usize,
            csb: usize,
            beta: $ty,
            c: &mut [$ty],
            rsc: usize,
            csc: usize,
        ) {
            assert!(extent(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
            assert!(extent(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
            assert!(extent(m, n, rsc, csc) <= c.len(), "gemm: output out of bounds");
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: the asserts above bound every strided access.
            unsafe {
                $kernel(
                    m,
                    k,
                    n,
                    alpha,
                    a.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    b.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    beta,
                    c.as_mut_ptr(),
                    rsc as isize,
                    csc as isize,
                );
            }
        }
    };
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn jacobi_tol() -> Self {
        1e-12
    }

    fast_gemm!(f64, matrixmultiply::dgemm);
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn jacobi_tol() -> Self {
        f32::EPSILON
    }

    fast_gemm!(f32, matrixmultiply::sgemm);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fast_kernel_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, k, n) = (7, 13, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fast = vec![0.5; m * n];
        let mut slow = fast.clone();
        // a stored row-major, b read transposed from column-major storage
        f64::gemm(m, k, n, 1.5, &a, k, 1, &b, 1, k, 0.25, &mut fast, n, 1);
        naive_gemm(m, k, n, 1.5, &a, k, 1, &b, 1, k, 0.25, &mut slow, n, 1);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
