use crate::Real;

/// `c[m,n] = op(a)[m,k] · op(b)[k,n]`, row-major, overwriting `c`.
///
/// A transposed operand is stored with its untransposed layout, i.e. `a` is
/// `[k,m]` when `trans_a` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    trans_a: bool,
    b: &[Real],
    trans_b: bool,
    c: &mut [Real],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe the exact extents checked above.
    unsafe {
        kernel(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as raw_gemm;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as raw_gemm;

#[allow(clippy::too_many_arguments)]
unsafe fn kernel(
    m: usize,
    k: usize,
    n: usize,
    a: *const Real,
    rsa: isize,
    csa: isize,
    b: *const Real,
    rsb: isize,
    csb: isize,
    c: *mut Real,
    rsc: isize,
    csc: isize,
) {
    raw_gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
}
