//! Scalar abstraction over f32/f64 with a strided-GEMM hook.

use std::cmp::Ordering;
use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type usable by every layer.
///
/// Training runs at f32; gradient checking runs the same generic code at f64
/// (central differences are unreliable at 32 bits). `gemm_strided` routes to
/// `matrixmultiply`, whose accumulation order per output element is fixed by
/// the operand dimensions, so results are bit-reproducible run to run.
pub trait Scalar:
    Float + NumAssignOps + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// IEEE total order (`total_cmp`); used to sort terms of canonical sums.
    fn order(&self, other: &Self) -> Ordering;

    /// ELU: x for x > 0, e^x - 1 otherwise.
    ///
    /// The encoder applies this to tens of millions of elements per training
    /// step, so the f32 impl trades libm's exactness for a branch-free
    /// polynomial the compiler can vectorize. f64 keeps the exact libm path;
    /// gradient checks run there.
    fn elu(self) -> Self;

    /// C <- alpha * A * B + beta * C where A is (m,k), B is (k,n), C is (m,n),
    /// each addressed through explicit row/column element strides.
    ///
    /// # Safety
    /// Every element reachable through the stride patterns must lie inside
    /// its allocation; the C region must not overlap A or B. Overlapping
    /// *read* views (e.g. a sliding-window view of a signal) are fine.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }

    /// Branch-free ELU. e^x is built as 2^k * 2^f with k recovered through the
    /// 1.5*2^23 magic-number rounding trick (float->int casts would block
    /// vectorization) and 2^f from a degree-5 minimax polynomial on
    /// [-0.5, 0.5]. Absolute error vs. the exact map is below 3e-6, about
    /// 20 ULP at ELU's output scale. No FMA/mul_add, so results are identical
    /// across targets.
    #[inline]
    fn elu(self) -> Self {
        const MAGIC: f32 = 12_582_912.0; // 1.5 * 2^23
        let t = (self * std::f32::consts::LOG2_E).max(-125.0);
        let m = t + MAGIC;
        let k = m - MAGIC; // round-to-nearest(t)
        let f = t - k; // [-0.5, 0.5]
        let p = 1.339_887_4e-3_f32;
        let p = p * f + 9.618_438e-3;
        let p = p * f + 5.550_332_3e-2;
        let p = p * f + 2.402_264_7e-1;
        let p = p * f + 6.931_472e-1;
        let p = p * f + 1.0;
        // bits(m) = 0x4B40_0000 + k, so (bits(m) - (0x4B40_0000 - 127)) << 23
        // assembles 2^k directly in the exponent field.
        let two_k = f32::from_bits(m.to_bits().wrapping_sub(0x4B3F_FF81) << 23);
        let e = p * two_k;
        if self > 0.0 {
            self
        } else {
            // self * 0.0 is NaN for NaN input and vanishes otherwise; the
            // max() above would silently swallow the NaN without it.
            e - 1.0 + self * 0.0
        }
    }

    #[inline]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }

    #[inline]
    fn elu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            self.exp() - 1.0
        }
    }

    #[inline]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Sorts terms into IEEE total order and sums left to right.
///
/// The result depends only on the multiset of terms, never on their original
/// arrangement, which is what makes attention reductions over the electrode
/// axis bit-exactly permutation-equivariant.
pub fn canonical_sum<S: Scalar>(terms: &mut [S]) -> S {
    terms.sort_unstable_by(|a, b| a.order(b));
    let mut acc = S::zero();
    for t in terms.iter() {
        acc += *t;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sum_is_permutation_invariant() {
        let base = [0.1f32, -7.25, 3.5e-3, 1.0e4, -0.1, 42.0, 1.0e-8];
        let mut a = base;
        let mut b = base;
        b.reverse();
        b.swap(1, 3);
        assert_eq!(
            canonical_sum(&mut a).to_bits(),
            canonical_sum(&mut b).to_bits()
        );
    }

    #[test]
    fn f32_elu_tracks_the_exact_map() {
        let mut x = -30.0f32;
        while x < 20.0 {
            let want = if x > 0.0 { x as f64 } else { (x as f64).exp() - 1.0 };
            let got = Scalar::elu(x) as f64;
            assert!((got - want).abs() < 3e-6, "elu({x}) = {got}, want {want}");
            x += 0.000_37;
        }
        assert_eq!(Scalar::elu(0.0f32), 0.0);
        assert_eq!(Scalar::elu(-100.0f32), -1.0);
        assert_eq!(Scalar::elu(3.75f32), 3.75);
    }

    #[test]
    fn f32_elu_propagates_non_finite_poison() {
        assert!(Scalar::elu(f32::NAN).is_nan());
        assert_eq!(Scalar::elu(f32::INFINITY), f32::INFINITY);
        assert!(Scalar::elu(f64::NAN).is_nan());
    }

    #[test]
    fn f64_elu_is_exact() {
        assert_eq!(Scalar::elu(-1.25f64), (-1.25f64).exp() - 1.0);
        assert_eq!(Scalar::elu(2.5f64), 2.5);
    }

    #[test]
    fn gemm_strided_matches_naive() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // (2,3)
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // (3,2)
        let mut c = [0.0f64; 4];
        unsafe {
            f64::gemm_strided(
                2,
                3,
                2,
                1.0,
                a.as_ptr(),
                3,
                1,
                b.as_ptr(),
                2,
                1,
                0.0,
                c.as_mut_ptr(),
                2,
                1,
            );
        }
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }
}
