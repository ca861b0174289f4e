use crate::scalar::Scalar;

/// Layer normalisation over the channel axis of a `[C, P]` map, separately at
/// every position `p`, with a learned per-channel gain and bias.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Default, Clone)]
pub struct LayerNormCache<T: Scalar> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm_forward<T: Scalar>(x: &[T], channels: usize, gain: &[T], bias: &[T], cache: &mut LayerNormCache<T>, out: &mut Vec<T>) {
    let p = x.len() / channels;
    let inv_c = T::one() / T::lit(channels as f64);
    cache.mean.clear();
    cache.mean.resize(p, T::zero());
    cache.rstd.clear();
    cache.rstd.resize(p, T::zero());
    for c in 0..channels {
        for (m, v) in cache.mean.iter_mut().zip(&x[c * p..(c + 1) * p]) {
            *m += *v;
        }
    }
    cache.mean.iter_mut().for_each(|m| *m *= inv_c);
    for c in 0..channels {
        for ((s, v), m) in cache.rstd.iter_mut().zip(&x[c * p..(c + 1) * p]).zip(&cache.mean) {
            let d = *v - *m;
            *s += d * d;
        }
    }
    let eps = T::lit(LAYER_NORM_EPS);
    cache.rstd.iter_mut().for_each(|s| *s = T::one() / (*s * inv_c + eps).sqrt());
    out.clear();
    out.resize(x.len(), T::zero());
    for c in 0..channels {
        let (g, b) = (gain[c], bias[c]);
        let r = c * p..(c + 1) * p;
        for (((o, v), m), s) in out[r.clone()].iter_mut().zip(&x[r]).zip(&cache.mean).zip(&cache.rstd) {
            *o = (*v - *m) * *s * g + b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    channels: usize,
    gain: &[T],
    cache: &LayerNormCache<T>,
    grad_out: &[T],
    grad_x: &mut [T],
    grad_gain: &mut [T],
    grad_bias: &mut [T],
    tmp: &mut Vec<T>,
) {
    let p = x.len() / channels;
    let inv_c = T::one() / T::lit(channels as f64);
    // tmp[0..p] = mean(dxhat), tmp[p..2p] = mean(dxhat * xhat)
    tmp.clear();
    tmp.resize(2 * p, T::zero());
    for c in 0..channels {
        let r = c * p..(c + 1) * p;
        let g = gain[c];
        let (mut gg, mut gb) = (T::zero(), T::zero());
        for (i, (v, dy)) in x[r.clone()].iter().zip(&grad_out[r]).enumerate() {
            let xhat = (*v - cache.mean[i]) * cache.rstd[i];
            let dxhat = *dy * g;
            tmp[i] += dxhat;
            tmp[p + i] += dxhat * xhat;
            gg += *dy * xhat;
            gb += *dy;
        }
        grad_gain[c] += gg;
        grad_bias[c] += gb;
    }
    for c in 0..channels {
        let r = c * p..(c + 1) * p;
        let g = gain[c];
        for (i, ((gx, v), dy)) in grad_x[r.clone()].iter_mut().zip(&x[r.clone()]).zip(&grad_out[r]).enumerate() {
            let xhat = (*v - cache.mean[i]) * cache.rstd[i];
            let dxhat = *dy * g;
            *gx += cache.rstd[i] * (dxhat - tmp[i] * inv_c - xhat * tmp[p + i] * inv_c);
        }
    }
}
