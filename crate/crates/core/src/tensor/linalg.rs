//! Safe GEMM front-end over `matrixmultiply`.

use crate::Real;

/// Layout of a row-major operand: `false` = stored as given, `true` = the
/// operand is stored transposed.
#[derive(Clone, Copy, Debug)]
pub struct Op(pub bool);

/// `c[m,n] = alpha * op(a)[m,k] * op(b)[k,n] + beta * c`.
///
/// `a` is stored row-major as `[m,k]` (or `[k,m]` when transposed), likewise
/// `b` as `[k,n]` (or `[n,k]`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    ta: Op,
    b: &[S],
    tb: Op,
    beta: S,
    c: &mut [S],
) {
    assert!(a.len() >= m * k, "gemm: a too small");
    assert!(b.len() >= k * n, "gemm: b too small");
    assert!(c.len() >= m * n, "gemm: c too small");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta.0 { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb.0 { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every (row, col) * stride access.
    unsafe {
        S::gemm_raw(
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
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}
