use super::TargetEmbedding;
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

/// Variance floor inside the standard deviation.
pub const POOL_EPS: f64 = 1e-9;

/// Floor on a fitted standardisation scale.
pub const NORM_SCALE_FLOOR: f32 = 1e-6;

/// Per-dimension standardisation `(s - mean) / scale` of pooled statistics,
/// fitted over a corpus of recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct StatNorm {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl StatNorm {
    /// Mean and population standard deviation of each dimension.
    pub fn fit(stats: &[Vec<f64>]) -> Result<Self> {
        let first = stats.first().ok_or_else(|| Error::TooShort("no statistics to fit".into()))?;
        let d = first.len();
        if stats.iter().any(|s| s.len() != d) {
            return Err(Error::Shape("statistics of unequal width".into()));
        }
        let n = stats.len() as f64;
        let mut mean = vec![0.0f64; d];
        for s in stats {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0f64; d];
        for s in stats {
            for ((q, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *q += (v - m) * (v - m) / n;
            }
        }
        Ok(StatNorm {
            mean: mean.iter().map(|&m| m as f32).collect(),
            scale: var.iter().map(|&q| (q.sqrt() as f32).max(NORM_SCALE_FLOOR)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, stats: &mut [f64]) {
        for ((v, m), s) in stats.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - *m as f64) / *s as f64;
        }
    }
}

/// Fixed attention and projection weights for statistics pooling.
///
/// Scores are `a_t = softmax_t(w · tanh(V h_t + b))`; the pooled `[μ, σ]`
/// (width `2·dim`) is optionally standardised, then projected to `out_dim`
/// and L2-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentivePool {
    pub dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// `hidden × dim`
    pub v: Vec<f64>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    /// `out_dim × 2·dim`
    pub proj: Vec<f64>,
    pub norm: Option<StatNorm>,
}

impl AttentivePool {
    /// Deterministic weights drawn from `seed`.
    pub fn seeded(dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = dim.max(1);
        let bv = 1.0 / (dim.max(1) as f64).sqrt();
        let uv = Uniform::new_inclusive(-bv, bv);
        let bw = 1.0 / (hidden as f64).sqrt();
        let uw = Uniform::new_inclusive(-bw, bw);
        let bp = (3.0 / (2 * dim.max(1)) as f64).sqrt();
        let up = Uniform::new_inclusive(-bp, bp);
        let v = (0..hidden * dim).map(|_| uv.sample(&mut rng)).collect();
        let w = (0..hidden).map(|_| uw.sample(&mut rng)).collect();
        let mut proj: Vec<f64> = (0..out_dim * 2 * dim).map(|_| up.sample(&mut rng)).collect();
        // each half of every row sums to zero, so offsets shared by all
        // means (or all deviations) do not reach the embedding
        for half in proj.chunks_exact_mut(dim.max(1)) {
            let m = half.iter().sum::<f64>() / half.len() as f64;
            half.iter_mut().for_each(|x| *x -= m);
        }
        AttentivePool { dim, hidden, out_dim, v, b: vec![0.0; hidden], w, proj, norm: None }
    }

    /// Same weights with the scoring vector zeroed, giving uniform attention.
    pub fn uniform(mut self) -> Self {
        self.w.iter_mut().for_each(|x| *x = 0.0);
        self
    }

    pub fn with_norm(mut self, norm: Option<StatNorm>) -> Result<Self> {
        if let Some(n) = &norm {
            if n.dim() != 2 * self.dim {
                return Err(Error::Shape(format!("standardisation of width {}, expected {}", n.dim(), 2 * self.dim)));
            }
        }
        self.norm = norm;
        Ok(self)
    }

    /// Pools `frames` (`t × dim`, row-major) and projects to a unit vector.
    pub fn embed(&self, frames: &[f32], t: usize) -> Result<TargetEmbedding> {
        let mut stats = attentive_stats_pool(frames, t, self)?;
        if let Some(n) = &self.norm {
            n.apply(&mut stats);
        }
        self.project(&stats)
    }

    /// Projects pooled (and standardised) statistics to a unit vector.
    pub fn project(&self, stats: &[f64]) -> Result<TargetEmbedding> {
        let out: Vec<f32> = self
            .proj
            .chunks_exact(2 * self.dim)
            .map(|row| row.iter().zip(stats).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect();
        TargetEmbedding::new(out)
    }
}

/// Attention-weighted mean and standard deviation over time, `[μ, σ]`.
pub fn attentive_stats_pool(frames: &[f32], t: usize, pool: &AttentivePool) -> Result<Vec<f64>> {
    let d = pool.dim;
    if t == 0 {
        return Err(Error::TooShort("statistics pooling needs at least one frame".into()));
    }
    if frames.len() != t * d {
        return Err(Error::Shape(format!("{} feature values, expected {t}×{d}", frames.len())));
    }
    let mut scores = Vec::with_capacity(t);
    for h in frames.chunks_exact(d) {
        let mut s = 0.0;
        for (j, row) in pool.v.chunks_exact(d).enumerate() {
            let z: f64 = row.iter().zip(h).map(|(a, &x)| a * x as f64).sum::<f64>() + pool.b[j];
            s += pool.w[j] * z.tanh();
        }
        scores.push(s);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in &mut scores {
        *s = (*s - max).exp();
        total += *s;
    }
    let mut mu = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for (h, a) in frames.chunks_exact(d).zip(&scores) {
        let a = a / total;
        for k in 0..d {
            let x = h[k] as f64;
            mu[k] += a * x;
            sq[k] += a * x * x;
        }
    }
    let sigma = mu.iter().zip(&sq).map(|(m, s)| (s - m * m).max(0.0) + POOL_EPS).map(f64::sqrt);
    let out: Vec<f64> = mu.iter().cloned().chain(sigma).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite pooled statistics".into()));
    }
    Ok(out)
}
