//! Hand-crafted spectral descriptors and the stub describer/classifier built on them.

use super::{Classifier, Describer};
use crate::audio::{resample, stft, Waveform, MODEL_RATE};
use crate::datagen::{synth_clip, TOY_CLASSES};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RMS level below which audio counts as silence, in dBFS.
pub const SILENCE_DBFS: f64 = -80.0;
const FRAME: usize = 512;
const HOP: usize = 128;
const POWER_EPS: f64 = 1e-20;
/// rise over the recent floor that marks an onset
const ONSET_RISE_DB: f64 = 9.0;
const ONSET_GATE_DB: f64 = 30.0;
const ONSET_REFRACTORY_FRAMES: usize = 6;

/// Summary features of a clip, computed at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralFeatures {
    pub rms_dbfs: f64,
    pub centroid_hz: f64,
    pub dominant_hz: f64,
    /// geometric over arithmetic mean of the average power spectrum
    pub flatness: f64,
    pub onsets_per_sec: f64,
    /// coefficient of variation of frame RMS
    pub envelope_cv: f64,
}

impl SpectralFeatures {
    pub fn compute(wave: &Waveform) -> Result<Self> {
        let owned;
        let w = if wave.sample_rate == MODEL_RATE {
            wave
        } else {
            owned = resample(wave, MODEL_RATE)?;
            &owned
        };
        if w.len() < FRAME {
            return Err(Error::TooShort(format!("{} samples, need {FRAME}", w.len())));
        }
        let rms_dbfs = 10.0 * (w.power() + POWER_EPS).log10();
        let spec = stft(w, FRAME, HOP)?;
        let bins = FRAME / 2 + 1;
        let mut avg = vec![0.0f64; bins];
        let mut env = Vec::with_capacity(spec.n_frames);
        for t in 0..spec.n_frames {
            let mut e = 0.0;
            for (a, c) in avg.iter_mut().zip(spec.frame(t)) {
                let p = c.norm_sqr() as f64;
                *a += p;
                e += p;
            }
            env.push(e);
        }
        let bin_hz = MODEL_RATE as f64 / FRAME as f64;
        let (mut num, mut den, mut log_sum) = (0.0, 0.0, 0.0);
        let mut dominant = (0.0, 1);
        for (k, &p) in avg.iter().enumerate().skip(1) {
            num += p * k as f64 * bin_hz;
            den += p;
            log_sum += (p + POWER_EPS).ln();
            if p > dominant.0 {
                dominant = (p, k);
            }
        }
        let used = (bins - 1) as f64;
        let flatness = if den > 0.0 { (log_sum / used).exp() / (den / used + POWER_EPS) } else { 0.0 };
        let centroid_hz = if den > 0.0 { num / den } else { 0.0 };

        let db: Vec<f64> = env.iter().map(|e| 10.0 * (e + POWER_EPS).log10()).collect();
        let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut onsets = 0;
        let mut last = None::<usize>;
        for t in 3..db.len() {
            let floor = db[t - 3..t].iter().cloned().fold(f64::INFINITY, f64::min);
            let ready = last.map_or(true, |l| t - l >= ONSET_REFRACTORY_FRAMES);
            if ready && db[t] - floor >= ONSET_RISE_DB && db[t] >= peak - ONSET_GATE_DB {
                onsets += 1;
                last = Some(t);
            }
        }
        let amp: Vec<f64> = env.iter().map(|e| e.sqrt()).collect();
        let mean = amp.iter().sum::<f64>() / amp.len() as f64;
        let var = amp.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / amp.len() as f64;
        Ok(SpectralFeatures {
            rms_dbfs,
            centroid_hz,
            dominant_hz: dominant.1 as f64 * bin_hz,
            flatness,
            onsets_per_sec: onsets as f64 / w.duration_secs(),
            envelope_cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        })
    }

    pub fn is_silent(&self) -> bool {
        self.rms_dbfs < SILENCE_DBFS
    }

    /// Vector used for nearest-template classification.
    fn embedding(&self) -> [f64; 4] {
        [self.flatness.max(1e-6).log10(), self.centroid_hz.max(20.0).log2(), self.envelope_cv, (1.0 + self.onsets_per_sec).ln()]
    }
}

/// Template describer: band, spectral texture and temporal pattern.
#[derive(Debug, Clone, Default)]
pub struct StubDescriber;

impl Describer for StubDescriber {
    fn describe(&self, snapshot: &Waveform) -> Result<String> {
        if snapshot.duration_secs() < 1.0 {
            return Err(Error::TooShort(format!("{:.3} s snapshot", snapshot.duration_secs())));
        }
        let f = SpectralFeatures::compute(snapshot)?;
        if f.is_silent() {
            return Err(Error::DescriptionUnavailable("silent snapshot".into()));
        }
        let band = match f.centroid_hz {
            c if c < 250.0 => "low-frequency",
            c if c < 2000.0 => "mid-frequency",
            _ => "high-frequency",
        };
        let pitch = match f.centroid_hz {
            c if c < 250.0 => "low-pitched",
            c if c < 2000.0 => "",
            _ => "high-pitched",
        };
        let texture = if f.flatness < 0.05 {
            "tonal"
        } else if f.flatness > 0.3 {
            "broadband noisy"
        } else {
            "textured"
        };
        let temporal = if f.onsets_per_sec >= 1.5 {
            "periodic pulsing"
        } else if f.envelope_cv > 0.5 {
            "intermittent"
        } else {
            "steady"
        };
        let words: Vec<&str> = [band, pitch, temporal, texture, "sound"].into_iter().filter(|w| !w.is_empty()).collect();
        Ok(words.join(" "))
    }
}

/// Nearest-centroid classifier over the toy classes' spectral features.
#[derive(Debug, Clone)]
pub struct StubClassifier {
    labels: Vec<String>,
    centroids: Vec<[f64; 4]>,
    scale: [f64; 4],
}

impl StubClassifier {
    /// Fits templates from `clips_per_class` synthesized one-second clips.
    pub fn toy(clips_per_class: usize, seed: u64) -> Result<Self> {
        let mut labels = Vec::new();
        let mut per_class = Vec::new();
        for (ci, c) in TOY_CLASSES.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ci as u64 + 1) << 40));
            let mut feats = Vec::new();
            for _ in 0..clips_per_class.max(1) {
                feats.push(SpectralFeatures::compute(&synth_clip(c, 1.0, &mut rng)?)?.embedding());
            }
            labels.push(c.to_string());
            per_class.push(feats);
        }
        Ok(Self::fit(labels, &per_class))
    }

    fn fit(labels: Vec<String>, per_class: &[Vec<[f64; 4]>]) -> Self {
        let centroids: Vec<[f64; 4]> = per_class
            .iter()
            .map(|fs| {
                let mut m = [0.0; 4];
                for f in fs {
                    for d in 0..4 {
                        m[d] += f[d] / fs.len() as f64;
                    }
                }
                m
            })
            .collect();
        // spread of the class centroids per dimension
        let mut scale = [0.0; 4];
        for (d, s) in scale.iter_mut().enumerate() {
            let mean = centroids.iter().map(|c| c[d]).sum::<f64>() / centroids.len() as f64;
            let var = centroids.iter().map(|c| (c[d] - mean).powi(2)).sum::<f64>() / centroids.len() as f64;
            *s = var.sqrt().max(1e-3);
        }
        StubClassifier { labels, centroids, scale }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl Classifier for StubClassifier {
    fn classify(&self, window: &Waveform) -> Result<Vec<(String, f32)>> {
        let f = SpectralFeatures::compute(window)?;
        if f.is_silent() {
            return Ok(Vec::new());
        }
        let e = f.embedding();
        let d2: Vec<f64> = self.centroids.iter().map(|c| (0..4).map(|d| ((e[d] - c[d]) / self.scale[d]).powi(2)).sum()).collect();
        let best = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = d2.iter().map(|v| (-(v - best)).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(self.labels.iter().cloned().zip(w.iter().map(|v| (v / z) as f32)).collect())
    }
}
