//! Parametric synthetic sound classes for self-contained training and tests.

use super::{ClassCatalog, LoadedCatalog};
use crate::audio::{write_wav, WavEncoding, Waveform, MODEL_RATE};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

pub const TOY_CLASSES: [&str; 6] = ["tone", "chirp", "noise_burst", "click_train", "hum", "hiss"];

/// Two-pole resonator band-pass; `q` sets the bandwidth.
struct BandPass {
    a1: f64,
    a2: f64,
    b0: f64,
    z1: f64,
    z2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64, rate: f64) -> Self {
        let w = 2.0 * PI * center / rate;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass { a1: -2.0 * w.cos() / a0, a2: (1.0 - alpha) / a0, b0: alpha / a0, z1: 0.0, z2: 0.0 }
    }

    fn tick(&mut self, x: f64) -> f64 {
        // direct form II transposed with b1 = 0, b2 = -b0
        let y = self.b0 * x + self.z1;
        self.z1 = self.z2 - self.a1 * y;
        self.z2 = -self.b0 * x - self.a2 * y;
        y
    }
}

fn white(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

/// One clip of `class` at 16 kHz.
pub fn synth_clip(class: &str, secs: f64, rng: &mut impl Rng) -> Result<Waveform> {
    let rate = MODEL_RATE as f64;
    let n = (secs * rate).round() as usize;
    let mut x = vec![0.0f64; n];
    match class {
        "tone" => {
            let f = rng.gen_range(350.0..1800.0);
            let am = rng.gen_range(0.2..1.5);
            let ph = rng.gen_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                let env = 0.85 + 0.15 * (2.0 * PI * am * t).sin();
                *v = 0.3 * env * ((2.0 * PI * f * t + ph).sin() + 0.3 * (4.0 * PI * f * t + ph).sin());
            }
        }
        "chirp" => {
            let f0 = rng.gen_range(400.0..900.0);
            let f1 = rng.gen_range(2500.0..4500.0);
            let period = rng.gen_range(0.25..0.6);
            let mut phase = 0.0;
            for (i, v) in x.iter_mut().enumerate() {
                let t = (i as f64 / rate) % period;
                let f = f0 + (f1 - f0) * t / period;
                phase += 2.0 * PI * f / rate;
                *v = 0.3 * phase.sin();
            }
        }
        "noise_burst" => {
            let center = rng.gen_range(900.0..2500.0);
            let mut bp = BandPass::new(center, 2.0, rate);
            let mut i = (rng.gen_range(0.0..0.15) * rate) as usize;
            while i < n {
                let len = (rng.gen_range(0.06..0.2) * rate) as usize;
                for j in 0..len.min(n - i) {
                    let env = (PI * j as f64 / len as f64).sin();
                    x[i + j] = env * white(rng);
                }
                i += len + (rng.gen_range(0.08..0.3) * rate) as usize;
            }
            for v in &mut x {
                *v = 1.2 * bp.tick(*v);
            }
        }
        "click_train" => {
            let rate_hz = rng.gen_range(8.0..20.0);
            let step = rate / rate_hz;
            let decay = (-1.0 / (0.002 * rate)).exp();
            let mut next = rng.gen_range(0.0..step);
            let mut env = 0.0;
            let mut sign = 1.0;
            for (i, v) in x.iter_mut().enumerate() {
                if i as f64 >= next {
                    env = 0.8;
                    sign = -sign;
                    next += step;
                }
                *v = sign * env * white(rng).abs().max(0.3);
                env *= decay;
            }
        }
        "hum" => {
            let f = if rng.gen_bool(0.5) { 50.0 } else { 60.0 };
            let phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                *v = 0.12 * (1..=6).map(|h| (2.0 * PI * f * h as f64 * t + phases[h - 1]).sin() / h as f64).sum::<f64>();
            }
        }
        "hiss" => {
            let mut prev = 0.0;
            for v in &mut x {
                let w = white(rng);
                // first difference tilts the spectrum towards high frequencies
                *v = 0.15 * (w - prev);
                prev = w;
            }
        }
        other => return Err(Error::NotFound(format!("toy class {other}"))),
    }
    Waveform::new(x.into_iter().map(|v| v as f32).collect(), MODEL_RATE)
}

fn clip_rng(seed: u64, class_index: usize, file: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((class_index as u64) << 32) | file as u64);
    r
}

fn check_classes(classes: &[&str]) -> Result<()> {
    for c in classes {
        if !TOY_CLASSES.contains(c) {
            return Err(Error::NotFound(format!("toy class {c}")));
        }
    }
    Ok(())
}

/// In-memory toy corpus; no files are written.
pub fn toy_catalog(classes: &[&str], files_per_class: usize, secs: f64, seed: u64) -> Result<LoadedCatalog> {
    check_classes(classes)?;
    let mut map = BTreeMap::new();
    for (ci, c) in classes.iter().enumerate() {
        let clips = (0..files_per_class).map(|f| synth_clip(c, secs, &mut clip_rng(seed, ci, f))).collect::<Result<Vec<_>>>()?;
        map.insert(c.to_string(), clips);
    }
    LoadedCatalog::from_clips(map)
}

/// Writes float32 WAVs under `dir/<class>/NNN.wav` plus `dir/manifest.tsv`.
pub fn synth_corpus(dir: impl AsRef<Path>, classes: &[&str], files_per_class: usize, secs: f64, seed: u64) -> Result<ClassCatalog> {
    check_classes(classes)?;
    let dir = dir.as_ref();
    let mut catalog = ClassCatalog::default();
    for (ci, c) in classes.iter().enumerate() {
        let sub = dir.join(c);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for f in 0..files_per_class {
            let w = synth_clip(c, secs, &mut clip_rng(seed, ci, f))?;
            let path = sub.join(format!("{f:03}.wav"));
            write_wav(&path, &w, WavEncoding::Float32)?;
            catalog.add(c, path)?;
        }
    }
    catalog.write_manifest(dir.join("manifest.tsv"))?;
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft, HOP_SIZE, WINDOW_SIZE};

    fn centroid(w: &Waveform) -> f64 {
        let s = stft(w, WINDOW_SIZE, HOP_SIZE).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for t in 0..s.n_frames {
            for (f, c) in s.frame(t).iter().enumerate() {
                let p = c.norm_sqr() as f64;
                num += p * f as f64 * 16000.0 / WINDOW_SIZE as f64;
                den += p;
            }
        }
        num / den
    }

    #[test]
    fn every_class_is_audible_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in TOY_CLASSES {
            let w = synth_clip(c, 2.0, &mut rng).unwrap();
            assert_eq!(w.len(), 32000);
            assert!(w.power() > 1e-4, "{c} power {}", w.power());
            assert!(w.peak() < 1.0, "{c} peak {}", w.peak());
        }
    }

    #[test]
    fn spectral_centroids_order_hum_below_hiss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hum = centroid(&synth_clip("hum", 1.0, &mut rng).unwrap());
        let hiss = centroid(&synth_clip("hiss", 1.0, &mut rng).unwrap());
        assert!(hum < 300.0, "hum centroid {hum}");
        assert!(hiss > 4000.0, "hiss centroid {hiss}");
    }

    #[test]
    fn corpus_on_disk_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let cat = synth_corpus(dir.path(), &["tone", "hiss"], 2, 1.0, 5).unwrap();
        let back = ClassCatalog::from_manifest(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(back, cat);
        let loaded = back.load().unwrap();
        let mem = toy_catalog(&["tone", "hiss"], 2, 1.0, 5).unwrap();
        assert_eq!(loaded, mem);
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!(toy_catalog(&["tone", "bagpipe"], 1, 1.0, 0).is_err());
    }
}
