//! Permutation-invariant fusion of a set of target embeddings into one
//! conditioning vector: `W2 · max_k SiLU(W1 e_k + b1) + b2`.

use crate::error::{Error, Result};
use crate::nn::{silu_grad, silu_scalar};
use crate::nn::{ParamSet, Tensor};
use crate::scalar::{matvec, Scalar};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Width of every target embedding.
pub const EMBED_DIM: usize = 768;
/// Hidden width of the fusion projection.
pub const FUSION_HIDDEN: usize = 1024;

pub const W1: &str = "fusion.W1";
pub const B1: &str = "fusion.b1";
pub const W2: &str = "fusion.W2";
pub const B2: &str = "fusion.b2";

/// Fusion projections. `w1` is `hidden × dim`, `w2` is `dim × hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<T: Scalar = f32> {
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> FusionWeights<T> {
    pub fn new(dim: usize, hidden: usize, w1: Vec<T>, b1: Vec<T>, w2: Vec<T>, b2: Vec<T>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Shape("fusion dims must be positive".into()));
        }
        let want = [(w1.len(), hidden * dim, W1), (b1.len(), hidden, B1), (w2.len(), dim * hidden, W2), (b2.len(), dim, B2)];
        for (got, need, name) in want {
            if got != need {
                return Err(Error::Shape(format!("{name}: {got} values, expected {need}")));
            }
        }
        let w = FusionWeights { dim, hidden, w1, b1, w2, b2 };
        for (name, v) in [(W1, &w.w1), (B1, &w.b1), (W2, &w.w2), (B2, &w.b2)] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("{name} is not finite")));
            }
        }
        Ok(w)
    }

    /// Uniform(±1/sqrt(fan_in)) weights, zero biases.
    pub fn random(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let u1 = Uniform::new_inclusive(-1.0 / (dim as f64).sqrt(), 1.0 / (dim as f64).sqrt());
        let u2 = Uniform::new_inclusive(-1.0 / (hidden as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        FusionWeights {
            dim,
            hidden,
            w1: (0..hidden * dim).map(|_| T::lit(u1.sample(rng))).collect(),
            b1: vec![T::zero(); hidden],
            w2: (0..dim * hidden).map(|_| T::lit(u2.sample(rng))).collect(),
            b2: vec![T::zero(); dim],
        }
    }

    /// Copies the `fusion.*` tensors out of a parameter set.
    pub fn from_params(params: &ParamSet<T>) -> Result<Self> {
        let w1 = params.get(W1)?;
        if w1.rank() != 2 {
            return Err(Error::Shape(format!("{W1} must be rank 2")));
        }
        let (hidden, dim) = (w1.shape[0], w1.shape[1]);
        Self::new(dim, hidden, w1.data.clone(), params.get(B1)?.data.clone(), params.get(W2)?.data.clone(), params.get(B2)?.data.clone())
    }

    /// Inserts the weights as `fusion.*` tensors.
    pub fn insert_into(&self, params: &mut ParamSet<T>) -> Result<()> {
        params.insert(W1, Tensor::new(vec![self.hidden, self.dim], self.w1.clone())?)?;
        params.insert(B1, Tensor::new(vec![self.hidden], self.b1.clone())?)?;
        params.insert(W2, Tensor::new(vec![self.dim, self.hidden], self.w2.clone())?)?;
        params.insert(B2, Tensor::new(vec![self.dim], self.b2.clone())?)?;
        Ok(())
    }
}

/// Saved forward state for [`fuse_backward`].
#[derive(Debug, Default, Clone)]
pub struct FusionCache<T: Scalar> {
    /// pre-activations `[K, hidden]`
    pub pre: Vec<T>,
    /// pooled activations `[hidden]`
    pub pooled: Vec<T>,
    /// winning embedding per hidden unit (lowest index on ties)
    pub winner: Vec<usize>,
}

fn check_inputs<T: Scalar, E: AsRef<[T]>>(embeddings: &[E], dim: usize) -> Result<()> {
    if embeddings.is_empty() {
        return Err(Error::EmptyTargets);
    }
    for (k, e) in embeddings.iter().enumerate() {
        let e = e.as_ref();
        if e.len() != dim {
            return Err(Error::Shape(format!("embedding {k} has {} values, expected {dim}", e.len())));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding {k} is not finite")));
        }
    }
    Ok(())
}

/// Forward pass that records what the backward pass needs.
pub fn fuse_forward<T: Scalar, E: AsRef<[T]>>(
    embeddings: &[E],
    w: &FusionWeights<T>,
    cache: &mut FusionCache<T>,
    out: &mut Vec<T>,
) -> Result<()> {
    check_inputs(embeddings, w.dim)?;
    let (d, h) = (w.dim, w.hidden);
    cache.pre.clear();
    cache.pre.resize(embeddings.len() * h, T::zero());
    cache.pooled.clear();
    cache.pooled.resize(h, T::neg_infinity());
    cache.winner.clear();
    cache.winner.resize(h, 0);
    for (k, e) in embeddings.iter().enumerate() {
        let z = &mut cache.pre[k * h..(k + 1) * h];
        matvec(&w.w1, h, d, e.as_ref(), z);
        for (j, (zv, b)) in z.iter_mut().zip(&w.b1).enumerate() {
            *zv += *b;
            let a = silu_scalar(*zv);
            if a > cache.pooled[j] {
                cache.pooled[j] = a;
                cache.winner[j] = k;
            }
        }
    }
    out.clear();
    out.resize(d, T::zero());
    matvec(&w.w2, d, h, &cache.pooled, out);
    for (o, b) in out.iter_mut().zip(&w.b2) {
        *o += *b;
    }
    Ok(())
}

/// Fuses a non-empty set of embeddings. The result does not depend on the
/// order of `embeddings`.
pub fn fuse_embeddings<T: Scalar, E: AsRef<[T]>>(embeddings: &[E], w: &FusionWeights<T>) -> Result<Vec<T>> {
    let mut cache = FusionCache::default();
    let mut out = Vec::new();
    fuse_forward(embeddings, w, &mut cache, &mut out)?;
    Ok(out)
}

/// Gradient slots for the fusion parameters, all accumulated into.
pub struct FusionGrads<'a, T: Scalar> {
    pub w1: &'a mut [T],
    pub b1: &'a mut [T],
    pub w2: &'a mut [T],
    pub b2: &'a mut [T],
}

/// Backward pass. Only the winning embedding of each hidden unit receives
/// gradient through that unit. `grad_embeddings`, if given, is `[K, dim]`.
pub fn fuse_backward<T: Scalar, E: AsRef<[T]>>(
    embeddings: &[E],
    w: &FusionWeights<T>,
    cache: &FusionCache<T>,
    grad_out: &[T],
    grads: FusionGrads<'_, T>,
    mut grad_embeddings: Option<&mut [T]>,
) {
    let (d, h) = (w.dim, w.hidden);
    for (r, g) in grad_out.iter().enumerate() {
        grads.b2[r] += *g;
        let row = &mut grads.w2[r * h..(r + 1) * h];
        for (gw, p) in row.iter_mut().zip(&cache.pooled) {
            *gw += *g * *p;
        }
    }
    for j in 0..h {
        let mut dp = T::zero();
        for (r, g) in grad_out.iter().enumerate() {
            dp += w.w2[r * h + j] * *g;
        }
        let k = cache.winner[j];
        let dz = dp * silu_grad(cache.pre[k * h + j]);
        grads.b1[j] += dz;
        let e = embeddings[k].as_ref();
        let gw = &mut grads.w1[j * d..(j + 1) * d];
        for (g, v) in gw.iter_mut().zip(e) {
            *g += dz * *v;
        }
        if let Some(ge) = grad_embeddings.as_deref_mut() {
            let wr = &w.w1[j * d..(j + 1) * d];
            for (g, v) in ge[k * d..(k + 1) * d].iter_mut().zip(wr) {
                *g += dz * *v;
            }
        }
    }
}
