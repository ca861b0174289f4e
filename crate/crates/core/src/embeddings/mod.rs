//! Target embeddings: statistics pooling over encoder features, class
//! averaging, and the class-id store.

mod pool;
mod store;

pub use pool::{attentive_stats_pool, AttentivePool, StatNorm, NORM_SCALE_FLOOR, POOL_EPS};
pub use store::{EmbeddingStore, Provenance, SharedStore, StoreEntry, STORE_MAGIC, STORE_VERSION};

use crate::audio::{resample, Waveform, MODEL_RATE};
use crate::error::{Error, Result};
use crate::suppressor::{SuppressorModel, Workspace};
use sha2::{Digest, Sha256};

/// Seed of the fixed pooling weights.
pub const POOL_SEED: u64 = 0x0ddba11;
/// Minimum duration of one recording.
pub const MIN_RECORDING_SECS: f64 = 1.0;

/// Class ids of the built-in catalog.
pub const BUILTIN_CLASSES: [&str; 25] = [
    "tone",
    "chirp",
    "noise_burst",
    "click_train",
    "hum",
    "hiss",
    "vacuum_cleaner",
    "dog_bark",
    "baby_cry",
    "siren",
    "car_horn",
    "jackhammer",
    "lawn_mower",
    "hair_dryer",
    "blender",
    "keyboard_typing",
    "alarm_clock",
    "door_knock",
    "snoring",
    "crowd_chatter",
    "traffic",
    "airplane",
    "helicopter",
    "washing_machine",
    "phone_ringing",
];

pub fn is_builtin(id: &str) -> bool {
    BUILTIN_CLASSES.contains(&id)
}

/// Unit-L2 embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEmbedding(Vec<f32>);

impl TargetEmbedding {
    /// Normalises `v` to unit length.
    pub fn new(v: Vec<f32>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Shape("empty embedding".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Numeric("zero embedding cannot be normalised".into()));
        }
        Ok(TargetEmbedding(v.into_iter().map(|x| (x as f64 / n) as f32).collect()))
    }

    /// Accepts an already-normalised vector unchanged.
    pub fn from_stored(v: Vec<f32>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-5 {
            return Err(Error::Numeric(format!("embedding norm {n} is not 1")));
        }
        Ok(TargetEmbedding(v))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn cosine(&self, other: &TargetEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| *a as f64 * *b as f64).sum()
    }
}

/// SHA-256 over the sample rate and raw sample bytes.
pub fn content_hash(wave: &Waveform) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(wave.sample_rate.to_le_bytes());
    for s in &wave.samples {
        h.update(s.to_le_bytes());
    }
    h.finalize().into()
}

/// Utterance embeddings from the suppressor's encoder.
pub struct EmbeddingExtractor {
    pool: AttentivePool,
    ws: Workspace<f32>,
    frames: Vec<f32>,
}

impl EmbeddingExtractor {
    pub fn new(model: &SuppressorModel<f32>) -> Result<Self> {
        let cfg = &model.config;
        let dim = 2 * cfg.channels.last().copied().unwrap_or(1);
        let pool = AttentivePool::seeded(dim, cfg.embed_dim, POOL_SEED).with_norm(model.embed_norm.clone())?;
        Ok(EmbeddingExtractor { pool, ws: Workspace::new(cfg)?, frames: Vec::new() })
    }

    pub fn pool(&self) -> &AttentivePool {
        &self.pool
    }

    /// Bottleneck activations averaged over frequency, one row per frame.
    pub fn features(&mut self, model: &SuppressorModel<f32>, wave: &Waveform) -> Result<(&[f32], usize)> {
        let owned;
        let wave = if wave.sample_rate == MODEL_RATE {
            wave
        } else {
            owned = resample(wave, MODEL_RATE)?;
            &owned
        };
        model.encode(&mut self.ws, &wave.samples, MODEL_RATE)?;
        let (act, t, f) = self.ws.bottleneck_features();
        let planes = act.len() / (t * f);
        self.frames.clear();
        self.frames.resize(t * planes, 0.0);
        for p in 0..planes {
            for ti in 0..t {
                let row = &act[(p * t + ti) * f..(p * t + ti + 1) * f];
                self.frames[ti * planes + p] = row.iter().sum::<f32>() / f as f32;
            }
        }
        Ok((&self.frames, t))
    }

    pub fn utterance(&mut self, model: &SuppressorModel<f32>, wave: &Waveform) -> Result<TargetEmbedding> {
        self.features(model, wave)?;
        let t = self.ws.frames();
        self.pool.embed(&self.frames, t)
    }

    /// Pooled `[μ, σ]` of one recording, before standardisation.
    pub fn pooled_stats(&mut self, model: &SuppressorModel<f32>, wave: &Waveform) -> Result<Vec<f64>> {
        self.features(model, wave)?;
        let t = self.ws.frames();
        attentive_stats_pool(&self.frames, t, &self.pool)
    }
}

/// Class embedding: normalised mean of the utterance embeddings, summed in
/// order of recording content hash.
pub fn build_class_embedding(recordings: &[Waveform], model: &SuppressorModel<f32>, extractor: &mut EmbeddingExtractor) -> Result<TargetEmbedding> {
    if recordings.is_empty() {
        return Err(Error::TooShort("no recordings".into()));
    }
    let short: Vec<String> = recordings
        .iter()
        .enumerate()
        .filter(|(_, w)| w.duration_secs() < MIN_RECORDING_SECS)
        .map(|(i, w)| format!("recording {i} ({:.3} s)", w.duration_secs()))
        .collect();
    if !short.is_empty() {
        return Err(Error::TooShort(format!("{} shorter than {MIN_RECORDING_SECS} s", short.join(", "))));
    }
    let mut utts = Vec::with_capacity(recordings.len());
    for w in recordings {
        utts.push((content_hash(w), extractor.utterance(model, w)?));
    }
    utts.sort_by(|a, b| a.0.cmp(&b.0));
    let dim = utts[0].1.dim();
    let mut acc = vec![0.0f64; dim];
    for (_, e) in &utts {
        for (a, v) in acc.iter_mut().zip(e.as_slice()) {
            *a += *v as f64;
        }
    }
    TargetEmbedding::new(acc.into_iter().map(|a| (a / utts.len() as f64) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suppressor::{init_model, SuppressorConfig};
    use rand::{Rng, SeedableRng};

    fn small_model() -> SuppressorModel<f32> {
        let cfg = SuppressorConfig { channels: vec![4, 8, 8, 8], lstm_hidden: 8, ..SuppressorConfig::default() };
        init_model(&cfg, 5).unwrap()
    }

    fn sine(freq: f64, secs: f64) -> Waveform {
        let n = (secs * 16000.0) as usize;
        Waveform::new((0..n).map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()) as f32).collect(), 16000).unwrap()
    }

    fn noise(seed: u64, secs: f64) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = (secs * 16000.0) as usize;
        Waveform::new((0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), 16000).unwrap()
    }

    #[test]
    fn repeated_recording_equals_single() {
        let m = small_model();
        let mut ex = EmbeddingExtractor::new(&m).unwrap();
        let r = sine(440.0, 1.2);
        let one = build_class_embedding(std::slice::from_ref(&r), &m, &mut ex).unwrap();
        let three = build_class_embedding(&[r.clone(), r.clone(), r], &m, &mut ex).unwrap();
        for (a, b) in one.as_slice().iter().zip(three.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn two_recordings_give_normalised_midpoint() {
        let m = small_model();
        let mut ex = EmbeddingExtractor::new(&m).unwrap();
        let (a, b) = (sine(440.0, 1.0), noise(3, 1.0));
        let ea = ex.utterance(&m, &a).unwrap();
        let eb = ex.utterance(&m, &b).unwrap();
        let mid = TargetEmbedding::new(ea.as_slice().iter().zip(eb.as_slice()).map(|(x, y)| (x + y) / 2.0).collect()).unwrap();
        let got = build_class_embedding(&[a, b], &m, &mut ex).unwrap();
        for (x, y) in got.as_slice().iter().zip(mid.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn order_of_recordings_is_irrelevant_bit_exactly() {
        let m = small_model();
        let mut ex = EmbeddingExtractor::new(&m).unwrap();
        let recs = vec![sine(300.0, 1.0), noise(1, 1.1), sine(2000.0, 1.3)];
        let a = build_class_embedding(&recs, &m, &mut ex).unwrap();
        let rev: Vec<Waveform> = recs.into_iter().rev().collect();
        let b = build_class_embedding(&rev, &m, &mut ex).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn short_recordings_are_listed() {
        let m = small_model();
        let mut ex = EmbeddingExtractor::new(&m).unwrap();
        let err = build_class_embedding(&[sine(440.0, 1.0), sine(440.0, 0.5)], &m, &mut ex).unwrap_err();
        match err {
            Error::TooShort(msg) => assert!(msg.contains("recording 1")),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn other_rates_are_resampled() {
        let m = small_model();
        let mut ex = EmbeddingExtractor::new(&m).unwrap();
        let w48 = Waveform::new((0..48000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(), 48000).unwrap();
        let e = build_class_embedding(&[w48], &m, &mut ex).unwrap();
        assert_eq!(e.dim(), 768);
    }
}
