//! Strided matrix product on top of `matrixmultiply`.
//!
//! The kernel is single-threaded with a fixed blocking order, so results are
//! bit-reproducible for identical inputs.

/// Strided view of a row-major-or-otherwise matrix.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `[rows, cols]` buffer.
    pub fn trans(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols,
        }
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, with `c` addressed by
/// `(rsc, csc)` strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, cc: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(
        c.len() > last(rsc, csc, m, n),
        "gemm output buffer too small"
    );
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = i * rsc + j * csc;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(a.data.len() > last(a.rs, a.cs, m, k), "gemm lhs too small");
    assert!(b.data.len() > last(b.rs, b.cs, k, n), "gemm rhs too small");
    // SAFETY: the assertions above guarantee every addressed element lies
    // inside the borrowed slices, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
