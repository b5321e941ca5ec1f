use super::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c = alpha * op(a) * op(b) + beta * c` with `c` an `m x n` row-major matrix.
///
/// `a` is stored row-major as `m x k`, or `k x m` when transposed; likewise
/// `b` is `k x n`, or `n x k` when transposed. When `beta` is zero `c` is not
/// read. Panics if a buffer is too short for its declared extent.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    ta: Transpose,
    tb: Transpose,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k, "gemm: a has {} elements, need {}", a.len(), m * k);
    assert!(b.len() >= k * n, "gemm: b has {} elements, need {}", b.len(), k * n);
    assert!(c.len() >= m * n, "gemm: c has {} elements, need {}", c.len(), m * n);
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        T::gemm_raw(
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

/// Matrix product of two 2-D tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape(format!(
            "matmul needs matrices, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, n])?;
    gemm(
        Transpose::No,
        Transpose::No,
        m,
        n,
        k,
        T::one(),
        a.data(),
        b.data(),
        T::zero(),
        out.data_mut(),
    );
    out.ensure_finite("matmul output")?;
    Ok(out)
}
