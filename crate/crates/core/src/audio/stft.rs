//! Short-time Fourier transform with sqrt-Hann analysis/synthesis windows.
//!
//! The signal is reflect-padded by half a window on both sides. Inversion
//! divides the overlap-add by the accumulated squared window so every sample,
//! including the edges, reconstructs exactly.

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use std::sync::Arc;

pub const WINDOW_SIZE: usize = 512;
pub const HOP_SIZE: usize = 128;

/// Periodic sqrt-Hann window.
pub fn sqrt_hann<T: Scalar>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| {
            let h = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            T::lit(h.sqrt())
        })
        .collect()
}

/// `n_frames × n_bins` complex grid, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram<T: Scalar = f32> {
    pub frames: Vec<Complex<T>>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub window_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
    /// length of the analysed signal, needed to trim the inverse
    pub signal_len: usize,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn empty(window_size: usize, hop_size: usize, sample_rate: u32) -> Self {
        ComplexSpectrogram {
            frames: Vec::new(),
            n_frames: 0,
            n_bins: window_size / 2 + 1,
            window_size,
            hop_size,
            sample_rate,
            signal_len: 0,
        }
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex<T> {
        self.frames[t * self.n_bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        &self.frames[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Elementwise complex product with a mask of the same shape.
    pub fn apply_mask(&self, mask: &[Complex<T>]) -> Result<Self> {
        if mask.len() != self.frames.len() {
            return Err(Error::Shape(format!("mask has {} cells, spectrogram {}", mask.len(), self.frames.len())));
        }
        let mut out = self.clone();
        for (y, m) in out.frames.iter_mut().zip(mask) {
            *y = *y * *m;
        }
        Ok(out)
    }
}

pub fn frame_count(len: usize, window_size: usize, hop_size: usize) -> usize {
    (len + window_size - window_size) / hop_size + 1
}

fn validate(window_size: usize, hop_size: usize) -> Result<()> {
    if !window_size.is_power_of_two() || window_size < 4 {
        return Err(Error::Config(format!("window size {window_size} is not a power of two ≥ 4")));
    }
    if hop_size == 0 || window_size % hop_size != 0 || window_size / hop_size < 2 {
        return Err(Error::Config(format!("hop {hop_size} must divide window {window_size} with overlap ≥ 2")));
    }
    Ok(())
}

/// Reusable FFT plans and scratch for one window/hop pair.
pub struct StftPlan<T: Scalar = f32> {
    window_size: usize,
    hop_size: usize,
    window: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    buf: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
    padded: Vec<T>,
    norm: Vec<T>,
}

impl<T: Scalar> std::fmt::Debug for StftPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("window_size", &self.window_size).field("hop_size", &self.hop_size).finish()
    }
}

impl<T: Scalar> StftPlan<T> {
    pub fn new(window_size: usize, hop_size: usize) -> Result<Self> {
        validate(window_size, hop_size)?;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(window_size);
        let inv = planner.plan_fft_inverse(window_size);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Ok(StftPlan {
            window_size,
            hop_size,
            window: sqrt_hann(window_size),
            fwd,
            inv,
            buf: vec![Complex::new(T::zero(), T::zero()); window_size],
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
            padded: Vec::new(),
            norm: Vec::new(),
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop_size(&self) -> usize {
        self.hop_size
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// Pre-size internal buffers for signals up to `max_len` samples.
    pub fn reserve(&mut self, max_len: usize) {
        let need = max_len + self.window_size;
        if self.padded.capacity() < need {
            self.padded.reserve(need);
        }
        if self.norm.capacity() < need {
            self.norm.reserve(need);
        }
    }

    pub fn stft_into(&mut self, samples: &[T], sample_rate: u32, out: &mut ComplexSpectrogram<T>) -> Result<()> {
        let n = self.window_size;
        let half = n / 2;
        let len = samples.len();
        if len <= half {
            return Err(Error::TooShort(format!("{len} samples; need more than {half} for reflect padding")));
        }
        self.padded.clear();
        for i in (1..=half).rev() {
            self.padded.push(samples[i]);
        }
        self.padded.extend_from_slice(samples);
        for i in 0..half {
            self.padded.push(samples[len - 2 - i]);
        }
        let n_frames = frame_count(len, n, self.hop_size);
        let bins = n / 2 + 1;
        out.frames.clear();
        out.frames.resize(n_frames * bins, Complex::new(T::zero(), T::zero()));
        out.n_frames = n_frames;
        out.n_bins = bins;
        out.window_size = n;
        out.hop_size = self.hop_size;
        out.sample_rate = sample_rate;
        out.signal_len = len;
        for t in 0..n_frames {
            let start = t * self.hop_size;
            for (i, b) in self.buf.iter_mut().enumerate() {
                *b = Complex::new(self.padded[start + i] * self.window[i], T::zero());
            }
            self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
            out.frames[t * bins..(t + 1) * bins].copy_from_slice(&self.buf[..bins]);
        }
        Ok(())
    }

    pub fn istft_into(&mut self, spec: &ComplexSpectrogram<T>, out: &mut Vec<T>) -> Result<()> {
        let n = self.window_size;
        if spec.window_size != n || spec.hop_size != self.hop_size || spec.n_bins != n / 2 + 1 {
            return Err(Error::Config(format!(
                "spectrogram window/hop {}/{} (bins {}) does not match plan {}/{}",
                spec.window_size, spec.hop_size, spec.n_bins, n, self.hop_size
            )));
        }
        if spec.frames.len() != spec.n_frames * spec.n_bins {
            return Err(Error::Shape("frame data length disagrees with dimensions".into()));
        }
        let half = n / 2;
        let padded_len = (spec.n_frames.saturating_sub(1)) * self.hop_size + n;
        self.padded.clear();
        self.padded.resize(padded_len, T::zero());
        self.norm.clear();
        self.norm.resize(padded_len, T::zero());
        let inv_n = T::one() / T::lit(n as f64);
        let bins = spec.n_bins;
        for t in 0..spec.n_frames {
            let frame = spec.frame(t);
            hermitian_fill(frame, &mut self.buf);
            self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
            let start = t * self.hop_size;
            for i in 0..n {
                let w = self.window[i];
                self.padded[start + i] += self.buf[i].re * inv_n * w;
                self.norm[start + i] += w * w;
            }
            let _ = bins;
        }
        let len = if spec.signal_len > 0 { spec.signal_len } else { (spec.n_frames.saturating_sub(1)) * self.hop_size };
        out.clear();
        let eps = T::lit(1e-10);
        for i in half..half + len {
            let d = self.norm.get(i).copied().unwrap_or(T::zero());
            let v = self.padded.get(i).copied().unwrap_or(T::zero());
            out.push(if d > eps { v / d } else { T::zero() });
        }
        Ok(())
    }

    /// Adjoint of [`Self::istft_into`] with respect to the spectrogram.
    ///
    /// `grad_out` is dL/d(output samples); returns dL/dY packed as
    /// `Complex(dL/dRe, dL/dIm)` per cell.
    pub fn istft_backward(&mut self, spec: &ComplexSpectrogram<T>, grad_out: &[T], grad_spec: &mut Vec<Complex<T>>) -> Result<()> {
        let n = self.window_size;
        let half = n / 2;
        let padded_len = (spec.n_frames.saturating_sub(1)) * self.hop_size + n;
        self.norm.clear();
        self.norm.resize(padded_len, T::zero());
        for t in 0..spec.n_frames {
            let start = t * self.hop_size;
            for i in 0..n {
                self.norm[start + i] += self.window[i] * self.window[i];
            }
        }
        // dL/d(padded overlap-add sum)
        self.padded.clear();
        self.padded.resize(padded_len, T::zero());
        let eps = T::lit(1e-10);
        for (k, g) in grad_out.iter().enumerate() {
            let i = half + k;
            if i < padded_len && self.norm[i] > eps {
                self.padded[i] = *g / self.norm[i];
            }
        }
        let bins = n / 2 + 1;
        grad_spec.clear();
        grad_spec.resize(spec.n_frames * bins, Complex::new(T::zero(), T::zero()));
        let inv_n = T::one() / T::lit(n as f64);
        let two = T::lit(2.0);
        for t in 0..spec.n_frames {
            let start = t * self.hop_size;
            for i in 0..n {
                self.buf[i] = Complex::new(self.padded[start + i] * self.window[i] * inv_n, T::zero());
            }
            self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
            let dst = &mut grad_spec[t * bins..(t + 1) * bins];
            for k in 0..bins {
                let g = self.buf[k];
                dst[k] = if k == 0 || k == n / 2 { Complex::new(g.re, T::zero()) } else { Complex::new(g.re * two, g.im * two) };
            }
        }
        Ok(())
    }
}

fn hermitian_fill<T: Scalar>(half_spec: &[Complex<T>], full: &mut [Complex<T>]) {
    let n = full.len();
    let bins = n / 2 + 1;
    full[0] = Complex::new(half_spec[0].re, T::zero());
    for k in 1..bins - 1 {
        full[k] = half_spec[k];
        full[n - k] = half_spec[k].conj();
    }
    full[n / 2] = Complex::new(half_spec[n / 2].re, T::zero());
}

pub fn stft(wave: &Waveform, window_size: usize, hop_size: usize) -> Result<ComplexSpectrogram<f32>> {
    let mut plan = StftPlan::<f32>::new(window_size, hop_size)?;
    let mut spec = ComplexSpectrogram::empty(window_size, hop_size, wave.sample_rate);
    plan.stft_into(&wave.samples, wave.sample_rate, &mut spec)?;
    Ok(spec)
}

pub fn istft(spec: &ComplexSpectrogram<f32>) -> Result<Waveform> {
    let mut plan = StftPlan::<f32>::new(spec.window_size, spec.hop_size)?;
    let mut out = Vec::new();
    plan.istft_into(spec, &mut out)?;
    Waveform::new(out, spec.sample_rate)
}

/// Generic-scalar convenience wrappers used by the model and its tests.
pub fn stft_into<T: Scalar>(plan: &mut StftPlan<T>, samples: &[T], rate: u32, out: &mut ComplexSpectrogram<T>) -> Result<()> {
    plan.stft_into(samples, rate, out)
}

pub fn istft_into<T: Scalar>(plan: &mut StftPlan<T>, spec: &ComplexSpectrogram<T>, out: &mut Vec<T>) -> Result<()> {
    plan.istft_into(spec, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        let den: f64 = b.iter().map(|y| (*y as f64).powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn dc_energy_in_bin_zero() {
        let w = Waveform::new(vec![1.0; 4000], 16_000).unwrap();
        let s = stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap();
        for t in 0..s.n_frames {
            let f = s.frame(t);
            // the sqrt-Hann (sine) window leaks into neighbours, but bin 0
            // dominates and carries most of the one-sided energy
            let e: Vec<f32> = f.iter().map(|c| c.norm_sqr()).collect();
            let total: f32 = e[0] + 2.0 * e[1..].iter().sum::<f32>();
            assert!(e[1..].iter().all(|&x| x < e[0]), "frame {t}");
            assert!(e[0] / total > 0.6, "frame {t}: {}", e[0] / total);
        }
    }

    #[test]
    fn bin_centred_sine_has_single_peak() {
        let k = 20usize;
        let w = Waveform::new(
            (0..8000).map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / WINDOW_SIZE as f64).cos() as f32).collect(),
            16_000,
        )
        .unwrap();
        let s = stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap();
        for t in 2..s.n_frames - 2 {
            let f = s.frame(t);
            let peak = (0..s.n_bins).max_by(|a, b| f[*a].norm().partial_cmp(&f[*b].norm()).unwrap()).unwrap();
            assert_eq!(peak, k);
            // sqrt-Hann main lobe spans neighbours; beyond ±2 bins it must be small
            let far = (0..s.n_bins).filter(|b| b.abs_diff(k) > 2).map(|b| f[b].norm()).fold(0.0, f32::max);
            assert!(far < 0.05 * f[k].norm());
        }
    }

    #[test]
    fn zeros_and_frame_count() {
        let w = Waveform::silence(1000, 16_000);
        let s = stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap();
        assert_eq!(s.n_frames, 1000 / HOP_SIZE + 1);
        assert_eq!(s.n_bins, 257);
        assert!(s.frames.iter().all(|c| c.norm() == 0.0));
        assert_eq!(istft(&s).unwrap().samples, vec![0.0; 1000]);
        assert!(matches!(stft(&Waveform::silence(256, 16_000), 512, 128), Err(Error::TooShort(_))));
        assert!(matches!(stft(&w, 500, 125), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for len in [1600usize, 16_000, 16_037] {
            let w = Waveform::new((0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), 16_000).unwrap();
            let back = istft(&stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap()).unwrap();
            assert_eq!(back.len(), len);
            let err = rel_l2(&back.samples, &w.samples);
            assert!(err <= 1e-6, "{len}: {err}");
        }
    }

    #[test]
    fn identity_mask_equals_plain_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w = Waveform::new((0..5000).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), 16_000).unwrap();
        let s = stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap();
        let ones = vec![Complex::new(1.0f32, 0.0); s.frames.len()];
        assert_eq!(istft(&s.apply_mask(&ones).unwrap()).unwrap(), istft(&s).unwrap());
    }

    #[test]
    fn mismatched_metadata_is_config_error() {
        let w = Waveform::silence(2000, 16_000);
        let mut s = stft(&w, WINDOW_SIZE, HOP_SIZE).unwrap();
        s.n_bins = 100;
        assert!(matches!(istft(&s), Err(Error::Config(_))));
    }

    #[test]
    fn backward_is_adjoint() {
        // <istft(Y), g> == <Y, istft^T(g)> for the real inner product on (re, im)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut plan = StftPlan::<f64>::new(64, 16).unwrap();
        let x: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut spec = ComplexSpectrogram::empty(64, 16, 16_000);
        plan.stft_into(&x, 16_000, &mut spec).unwrap();
        for c in spec.frames.iter_mut() {
            *c = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let mut y = Vec::new();
        plan.istft_into(&spec, &mut y).unwrap();
        let g: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut gy = Vec::new();
        plan.istft_backward(&spec, &g, &mut gy).unwrap();
        let rhs: f64 = spec.frames.iter().zip(&gy).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
    }
}
