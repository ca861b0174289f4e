use super::config::SuppressorConfig;
use crate::error::{Error, Result};
use crate::embeddings::StatNorm;
use crate::fusion::FusionWeights;
use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint, ConvGeom, ConvKind, ParamSet, Tensor};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Replaces the predicted mask, for exercising the surrounding pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOverride {
    Ones,
    Zeros,
}

/// Parameters and architecture of the suppression network.
#[derive(Debug, Clone)]
pub struct SuppressorModel<T: Scalar = f32> {
    pub config: SuppressorConfig,
    pub params: ParamSet<T>,
    pub mask_override: Option<MaskOverride>,
    /// standardisation of pooled encoder statistics used for embeddings;
    /// not trained by the optimiser
    pub embed_norm: Option<StatNorm>,
}

pub(crate) fn enc(i: usize, part: &str) -> String {
    format!("enc{i}.{part}")
}

pub(crate) fn dec(i: usize, part: &str) -> String {
    format!("dec{i}.{part}")
}

pub(crate) fn lstm(l: usize, part: &str) -> String {
    format!("lstm{l}.{part}")
}

pub const FILM_WG: &str = "film.wg";
pub const FILM_BG: &str = "film.bg";
pub const FILM_WB: &str = "film.wb";
pub const FILM_BB: &str = "film.bb";
pub const PROJ_W: &str = "proj.w";
pub const PROJ_B: &str = "proj.b";
pub const EMBED_NORM_MEAN: &str = "embed_norm.mean";
pub const EMBED_NORM_SCALE: &str = "embed_norm.scale";

impl SuppressorConfig {
    pub(crate) fn enc_geom(&self, i: usize) -> ConvGeom {
        let c_in = if i == 0 { 1 } else { self.channels[i - 1] };
        ConvGeom { kind: ConvKind::Conv, c_in, c_out: self.channels[i], kt: self.kernel_t, kf: self.kernel_f, stride_f: self.stride_f, pad_f: self.pad_f() }
    }

    /// Decoder stage `i` runs from the bottleneck (`i = 0`) outwards and
    /// consumes the previous stage concatenated with the matching skip.
    pub(crate) fn dec_geom(&self, i: usize) -> ConvGeom {
        let l = self.channels.len();
        let level = l - 1 - i;
        let c_out = if level == 0 { 1 } else { self.channels[level - 1] };
        ConvGeom { kind: ConvKind::Transposed, c_in: 2 * self.channels[level], c_out, kt: self.kernel_t, kf: self.kernel_f, stride_f: self.stride_f, pad_f: self.pad_f() }
    }

    pub(crate) fn lstm_width(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub(crate) fn lstm_input(&self, l: usize) -> usize {
        if l == 0 {
            self.bottleneck_width()
        } else {
            self.lstm_width()
        }
    }
}

fn uniform<T: Scalar>(n: usize, bound: f64, rng: &mut impl Rng) -> Vec<T> {
    let u = Uniform::new_inclusive(-bound, bound);
    (0..n).map(|_| T::lit(u.sample(rng))).collect()
}

/// `n × n` orthogonal matrix from Gram-Schmidt on a Gaussian draw.
fn orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        for _ in 0..2 {
            for j in 0..i {
                let dot: f64 = (0..n).map(|c| q[i * n + c] * q[j * n + c]).sum();
                for c in 0..n {
                    q[i * n + c] -= dot * q[j * n + c];
                }
            }
        }
        let norm = (0..n).map(|c| q[i * n + c] * q[i * n + c]).sum::<f64>().sqrt();
        for c in 0..n {
            q[i * n + c] /= norm;
        }
    }
    q
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("shape matches data by construction")
}

/// Deterministic initialisation from `seed`.
///
/// Conv weights are Kaiming-uniform, recurrent weights orthogonal per gate,
/// biases zero, and the FiLM heads start at gamma ≈ 1, beta ≈ 0.
pub fn init_model<T: Scalar>(config: &SuppressorConfig, seed: u64) -> Result<SuppressorModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let conv_params = |p: &mut ParamSet<T>, g: ConvGeom, name: &dyn Fn(&str) -> String, rng: &mut ChaCha8Rng, norm: bool| -> Result<()> {
        let fan_in = 2 * g.c_in * g.kernel_len();
        let bound = (6.0 / fan_in as f64).sqrt();
        let shape = g.weight_shape();
        p.insert(name("re"), tensor(&shape, uniform(g.weight_len(), bound, rng)))?;
        p.insert(name("im"), tensor(&shape, uniform(g.weight_len(), bound, rng)))?;
        if norm {
            p.insert(name("ln_g"), Tensor::filled(&[2 * g.c_out], T::one()))?;
            p.insert(name("ln_b"), Tensor::zeros(&[2 * g.c_out]))?;
            p.insert(name("prelu"), Tensor::filled(&[g.c_out], T::lit(0.25)))?;
        }
        Ok(())
    };
    let l = config.channels.len();
    for i in 0..l {
        conv_params(&mut p, config.enc_geom(i), &|s| enc(i, s), &mut rng, true)?;
    }
    let hw = config.lstm_width();
    for layer in 0..config.lstm_layers {
        let d_in = config.lstm_input(layer);
        let bound = 1.0 / (hw as f64).sqrt();
        p.insert(lstm(layer, "wx"), tensor(&[4 * hw, d_in], uniform(4 * hw * d_in, bound, &mut rng)))?;
        let mut wh = Vec::with_capacity(4 * hw * hw);
        for _ in 0..4 {
            wh.extend(orthogonal(hw, &mut rng).into_iter().map(T::lit));
        }
        p.insert(lstm(layer, "wh"), tensor(&[4 * hw, hw], wh))?;
        p.insert(lstm(layer, "b"), Tensor::zeros(&[4 * hw]))?;
    }
    let e = config.embed_dim;
    let film_bound = 0.01 / (e as f64).sqrt();
    p.insert(FILM_WG, tensor(&[hw, e], uniform(hw * e, film_bound, &mut rng)))?;
    p.insert(FILM_BG, Tensor::filled(&[hw], T::one()))?;
    p.insert(FILM_WB, tensor(&[hw, e], uniform(hw * e, film_bound, &mut rng)))?;
    p.insert(FILM_BB, Tensor::zeros(&[hw]))?;
    let bw = config.bottleneck_width();
    p.insert(PROJ_W, tensor(&[bw, hw], uniform(bw * hw, 1.0 / (hw as f64).sqrt(), &mut rng)))?;
    p.insert(PROJ_B, Tensor::zeros(&[bw]))?;
    for i in 0..l {
        conv_params(&mut p, config.dec_geom(i), &|s| dec(i, s), &mut rng, i + 1 < l)?;
    }
    FusionWeights::<T>::random(e, config.fusion_hidden, &mut rng).insert_into(&mut p)?;
    Ok(SuppressorModel { config: config.clone(), params: p, mask_override: None, embed_norm: None })
}

impl<T: Scalar> SuppressorModel<T> {
    pub fn with_mask_override(mut self, m: MaskOverride) -> Self {
        self.mask_override = Some(m);
        self
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn fusion(&self) -> Result<FusionWeights<T>> {
        FusionWeights::from_params(&self.params)
    }

    pub fn cast<U: Scalar>(&self) -> SuppressorModel<U> {
        SuppressorModel { config: self.config.clone(), params: self.params.cast(), mask_override: self.mask_override, embed_norm: self.embed_norm.clone() }
    }

    /// Checks that every expected tensor is present with the right shape.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = init_model::<f32>(&self.config, 0)?;
        for (name, t) in reference.params.iter() {
            let got = self.params.get(name)?;
            if got.shape != t.shape {
                return Err(Error::Shape(format!("{name}: shape {:?}, expected {:?}", got.shape, t.shape)));
            }
            got.check_finite(name)?;
        }
        if self.params.len() != reference.params.len() {
            return Err(Error::Shape(format!("{} tensors, expected {}", self.params.len(), reference.params.len())));
        }
        Ok(())
    }
}

impl SuppressorModel<f32> {
    pub fn to_checkpoint(&self, extra_header: &str) -> Checkpoint {
        let mut header = self.config.to_header();
        header.push_str(extra_header);
        let mut tensors: Vec<(String, Tensor<f32>)> = self.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        if let Some(n) = &self.embed_norm {
            tensors.push((EMBED_NORM_MEAN.into(), tensor(&[n.dim()], n.mean.clone())));
            tensors.push((EMBED_NORM_SCALE.into(), tensor(&[n.dim()], n.scale.clone())));
        }
        Checkpoint { header, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = SuppressorConfig::from_header(&ck.header)?;
        let mut params = ParamSet::new();
        let (mut mean, mut scale) = (None, None);
        for (name, t) in &ck.tensors {
            match name.as_str() {
                EMBED_NORM_MEAN => mean = Some(t.data.clone()),
                EMBED_NORM_SCALE => scale = Some(t.data.clone()),
                _ => params.insert(name.clone(), t.clone())?,
            }
        }
        let embed_norm = match (mean, scale) {
            (Some(mean), Some(scale)) if mean.len() == scale.len() && mean.len() == 4 * config.channels.last().copied().unwrap_or(0) => Some(StatNorm { mean, scale }),
            (None, None) => None,
            _ => return Err(Error::Shape("inconsistent embedding standardisation tensors".into())),
        };
        let m = SuppressorModel { config, params, mask_override: None, embed_norm };
        m.check_shapes()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(&self.to_checkpoint(""), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    /// SHA-256 over tensor names, shapes and raw bytes of every saved tensor.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.to_checkpoint("").tensors {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u32).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
