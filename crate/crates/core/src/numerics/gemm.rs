//! Safe GEMM entry point for contiguous row-major operands.

use crate::numerics::scalar::Scalar;

/// y (m,n) <- alpha * op(a) * op(b) + beta * y.
///
/// With `ta == false` the slice `a` holds an (m,k) row-major matrix; with
/// `ta == true` it holds (k,m) and is used transposed. `tb` works the same
/// way for `b` with shapes (k,n) / (n,k). `y` is always (m,n) row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    ta: bool,
    b: &[S],
    tb: bool,
    beta: S,
    y: &mut [S],
) {
    assert_eq!(a.len(), m * k, "gemm: A length");
    assert_eq!(b.len(), k * n, "gemm: B length");
    assert_eq!(y.len(), m * n, "gemm: C length");
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        S::gemm_strided(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
