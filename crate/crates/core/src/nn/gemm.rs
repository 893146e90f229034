//! Thin safe wrapper over `matrixmultiply::dgemm` for dense row-major
//! buffers.

/// Operand layout: `Normal` is `rows × cols` row-major, `Transposed` means the
/// buffer holds the transpose (so it is stored `cols × rows`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Normal,
    Transposed,
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m × k` and
/// `op(b)` is `k × n`. `c` is `m × n` row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    op_a: Op,
    b: &[f64],
    op_b: Op,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has wrong length");
    assert_eq!(b.len(), k * n, "gemm: rhs has wrong length");
    assert_eq!(c.len(), m * n, "gemm: output has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match op_a {
        Op::Normal => (k as isize, 1),
        Op::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::Normal => (n as isize, 1),
        Op::Transposed => (1, k as isize),
    };
    // SAFETY: lengths are checked above, and the strides describe exactly
    // those buffers.
    unsafe {
        matrixmultiply::dgemm(
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
        );
    }
}
