use crate::scalar::Scalar;

/// `Y[rows, out] = X[rows, in] · Wᵀ + b`, with `W` stored `[out, in]`.
pub fn linear_forward<T: Scalar>(x: &[T], rows: usize, d_in: usize, w: &[T], b: Option<&[T]>, d_out: usize, y: &mut Vec<T>) {
    y.clear();
    y.resize(rows * d_out, T::zero());
    if let Some(b) = b {
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(rows, d_in, d_out, T::one(), x, d_in as isize, 1, w, 1, d_in as isize, beta, y, d_out as isize, 1);
}

/// Accumulates dW, db and (optionally) dX.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    rows: usize,
    d_in: usize,
    w: &[T],
    d_out: usize,
    grad_y: &[T],
    grad_w: &mut [T],
    grad_b: Option<&mut [T]>,
    grad_x: Option<&mut [T]>,
) {
    // dW[out, in] += dYᵀ · X
    T::gemm(d_out, rows, d_in, T::one(), grad_y, 1, d_out as isize, x, d_in as isize, 1, T::one(), grad_w, d_in as isize, 1);
    if let Some(gb) = grad_b {
        for row in grad_y.chunks_exact(d_out) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += *v;
            }
        }
    }
    if let Some(gx) = grad_x {
        // dX += dY · W
        T::gemm(rows, d_out, d_in, T::one(), grad_y, d_out as isize, 1, w, d_in as isize, 1, T::one(), gx, d_in as isize, 1);
    }
}
