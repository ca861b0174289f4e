use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu_scalar<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// d silu / dx
#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn silu<T: Scalar>(x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().map(|&v| silu_scalar(v)));
}

pub fn silu_backward<T: Scalar>(x: &[T], grad_out: &[T], grad_in: &mut [T]) {
    for ((g_in, &v), &g) in grad_in.iter_mut().zip(x).zip(grad_out) {
        *g_in += g * silu_grad(v);
    }
}

/// Complex PReLU on a `[2C, P]` plane layout (real channels, then imaginary):
/// real and imaginary parts of complex channel `c` share slope `slope[c]`.
pub fn prelu_forward<T: Scalar>(x: &[T], channels: usize, slope: &[T], out: &mut Vec<T>) {
    let plane = x.len() / (2 * channels);
    out.clear();
    out.reserve(x.len());
    for (ch, chunk) in x.chunks_exact(plane).enumerate() {
        let a = slope[ch % channels];
        out.extend(chunk.iter().map(|&v| if v > T::zero() { v } else { a * v }));
    }
}

pub fn prelu_backward<T: Scalar>(x: &[T], channels: usize, slope: &[T], grad_out: &[T], grad_in: &mut [T], grad_slope: &mut [T]) {
    let plane = x.len() / (2 * channels);
    for ch in 0..2 * channels {
        let a = slope[ch % channels];
        let mut gs = T::zero();
        let range = ch * plane..(ch + 1) * plane;
        for ((gi, &v), &g) in grad_in[range.clone()].iter_mut().zip(&x[range.clone()]).zip(&grad_out[range]) {
            if v > T::zero() {
                *gi += g;
            } else {
                *gi += a * g;
                gs += g * v;
            }
        }
        grad_slope[ch % channels] += gs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_values() {
        assert_eq!(silu_scalar(0.0f64), 0.0);
        assert!((silu_scalar(20.0f64) - 20.0).abs() < 1e-6);
        // -1 * sigmoid(-1) evaluated by hand
        let oracle = -1.0 / (1.0 + 1f64.exp());
        assert!((silu_scalar(-1.0f64) - oracle).abs() < 1e-12);
        assert!((silu_scalar(-1.0f64) + 0.26894).abs() < 1e-5);
    }

    #[test]
    fn silu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (silu_scalar(x + h) - silu_scalar(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
