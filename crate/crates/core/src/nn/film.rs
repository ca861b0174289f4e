use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-channel affine modulation of `[C, T, F]` features.
pub fn film<T: Scalar>(features: &[T], shape: [usize; 3], gamma: &[T], beta: &[T], out: &mut Vec<T>) -> Result<()> {
    let [c, t, f] = shape;
    if features.len() != c * t * f {
        return Err(Error::Shape(format!("features length {} != {c}×{t}×{f}", features.len())));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("gamma/beta lengths {}/{} != channels {c}", gamma.len(), beta.len())));
    }
    let plane = t * f;
    out.clear();
    out.reserve(features.len());
    for ch in 0..c {
        out.extend(features[ch * plane..(ch + 1) * plane].iter().map(|&v| gamma[ch] * v + beta[ch]));
    }
    Ok(())
}

pub fn film_backward<T: Scalar>(
    features: &[T],
    shape: [usize; 3],
    gamma: &[T],
    grad_out: &[T],
    grad_features: &mut [T],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) {
    let [c, t, f] = shape;
    let plane = t * f;
    for ch in 0..c {
        let r = ch * plane..(ch + 1) * plane;
        let (mut gg, mut gb) = (T::zero(), T::zero());
        for ((gf, &x), &g) in grad_features[r.clone()].iter_mut().zip(&features[r.clone()]).zip(&grad_out[r]) {
            *gf += g * gamma[ch];
            gg += g * x;
            gb += g;
        }
        grad_gamma[ch] += gg;
        grad_beta[ch] += gb;
    }
}

/// FiLM over a `[T, C]` row layout (channel is the fastest axis).
pub fn film_rows<T: Scalar>(features: &[T], channels: usize, gamma: &[T], beta: &[T], out: &mut Vec<T>) {
    out.clear();
    out.reserve(features.len());
    for row in features.chunks_exact(channels) {
        out.extend(row.iter().zip(gamma).zip(beta).map(|((&v, &g), &b)| g * v + b));
    }
}

pub fn film_rows_backward<T: Scalar>(
    features: &[T],
    channels: usize,
    gamma: &[T],
    grad_out: &[T],
    grad_features: &mut [T],
    grad_gamma: &mut [T],
    grad_beta: &mut [T],
) {
    for ((row, grow), gfrow) in features.chunks_exact(channels).zip(grad_out.chunks_exact(channels)).zip(grad_features.chunks_exact_mut(channels)) {
        for c in 0..channels {
            gfrow[c] += grow[c] * gamma[c];
            grad_gamma[c] += grow[c] * row[c];
            grad_beta[c] += grow[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_and_constant() {
        let x: Vec<f32> = (0..24).map(|i| i as f32 * 0.3 - 2.0).collect();
        let mut out = Vec::new();
        film(&x, [2, 3, 4], &[1.0, 1.0], &[0.0, 0.0], &mut out).unwrap();
        assert_eq!(out, x);
        film(&x, [2, 3, 4], &[0.0, 0.0], &[1.5, -2.0], &mut out).unwrap();
        assert!(out[..12].iter().all(|&v| v == 1.5) && out[12..].iter().all(|&v| v == -2.0));
        assert!(matches!(film(&x, [3, 3, 4], &[1.0; 3], &[0.0; 3], &mut out), Err(Error::Shape(_))));
        assert!(matches!(film(&x, [2, 3, 4], &[1.0; 3], &[0.0; 2], &mut out), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_elementwise_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (c, t, f) = (3, 5, 7);
        let x: Vec<f32> = (0..c * t * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f32> = (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut out = Vec::new();
        film(&x, [c, t, f], &g, &b, &mut out).unwrap();
        for ci in 0..c {
            for ti in 0..t {
                for fi in 0..f {
                    let idx = (ci * t + ti) * f + fi;
                    assert_eq!(out[idx], g[ci] * x[idx] + b[ci]);
                }
            }
        }
    }
}
