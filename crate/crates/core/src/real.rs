//! Floating-point element trait shared by every network in the crate.
//!
//! Training runs in `f32`; the same graph code instantiated at `f64` backs the
//! finite-difference gradient checks.

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Strided view of a dense matrix buffer.
#[derive(Clone, Copy)]
pub struct MatView<'a, F> {
    pub data: &'a [F],
    pub rs: isize,
    pub cs: isize,
}

impl<'a, F> MatView<'a, F> {
    pub fn rows(data: &'a [F], cols: usize) -> Self {
        Self { data, rs: cols as isize, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [F], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols as isize }
    }
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Raw GEMM kernel.
    ///
    /// # Safety
    /// All strided accesses must stay inside the passed buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

/// `c = a @ b + beta * c` where `c` is a dense row-major `m x n` buffer.
pub fn gemm<F: Real>(m: usize, k: usize, n: usize, a: MatView<'_, F>, b: MatView<'_, F>, beta: F, c: &mut [F]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs buffer too small");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs buffer too small");
    assert!(m * n <= c.len(), "gemm: output buffer too small");
    if k == 0 {
        for x in c[..m * n].iter_mut() {
            *x = *x * beta;
        }
        return;
    }
    // SAFETY: extents checked above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: $t,
                a: *const $t,
                rsa: isize,
                csa: isize,
                b: *const $t,
                rsb: isize,
                csb: isize,
                beta: $t,
                c: *mut $t,
                rsc: isize,
                csc: isize,
            ) {
                $kernel(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
