//! Rational-ratio windowed-sinc polyphase resampling.
//!
//! Output sample `j` sits at input time `j * down / up`. Each output is a dot
//! product of `2 * half` input samples with one precomputed phase of a
//! Kaiser-windowed sinc (beta 9). The filter spans [`TAPS_PER_SIDE`] samples on
//! each side, measured at the lower of the two rates, with its cutoff at 90% of
//! the lower Nyquist frequency.

use super::Waveform;
use crate::error::{Error, Result};

pub const TAPS_PER_SIDE: usize = 32;
const KAISER_BETA: f64 = 9.0;
const CUTOFF: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[derive(Debug, Clone)]
struct PolyphaseKernel {
    up: usize,
    down: usize,
    half: usize,
    /// `up` phases of `2 * half` taps; tap `i` multiplies input `n0 - half + 1 + i`.
    table: Vec<f32>,
}

impl PolyphaseKernel {
    fn new(from_rate: u32, to_rate: u32) -> Self {
        let g = gcd(from_rate as u64, to_rate as u64);
        let up = (to_rate as u64 / g) as usize;
        let down = (from_rate as u64 / g) as usize;
        let half = TAPS_PER_SIDE * down.div_ceil(up).max(1);
        // cycles per input sample
        let fc = 0.5 * (up as f64 / down as f64).min(1.0) * CUTOFF;
        let i0_beta = bessel_i0(KAISER_BETA);
        let taps = 2 * half;
        let mut table = vec![0.0f32; up * taps];
        for p in 0..up {
            let frac = p as f64 / up as f64;
            let mut row = vec![0.0f64; taps];
            for (i, w) in row.iter_mut().enumerate() {
                // tau = t_j - n with n = n0 - half + 1 + i
                let tau = frac + half as f64 - 1.0 - i as f64;
                let r = tau / half as f64;
                if r.abs() > 1.0 {
                    continue;
                }
                let arg = 2.0 * fc * tau;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg) };
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                *w = 2.0 * fc * sinc * win;
            }
            let sum: f64 = row.iter().sum();
            for (dst, w) in table[p * taps..(p + 1) * taps].iter_mut().zip(&row) {
                *dst = (w / sum) as f32;
            }
        }
        PolyphaseKernel { up, down, half, table }
    }

    #[inline]
    fn taps(&self) -> usize {
        2 * self.half
    }

    /// (n0, phase) for output index j.
    #[inline]
    fn locate(&self, j: u64) -> (i64, usize) {
        let pos = j * self.down as u64;
        ((pos / self.up as u64) as i64, (pos % self.up as u64) as usize)
    }

    #[inline]
    fn dot(&self, phase: usize, window: &[f32]) -> f32 {
        let taps = self.taps();
        let coeffs = &self.table[phase * taps..(phase + 1) * taps];
        let mut acc = 0.0f32;
        for (c, x) in coeffs.iter().zip(window) {
            acc += c * x;
        }
        acc
    }
}

/// Offline band-limited resampling; output length is `round(len * to / from)`.
pub fn resample(wave: &Waveform, to_rate: u32) -> Result<Waveform> {
    if to_rate == 0 {
        return Err(Error::InvalidRate(to_rate));
    }
    if wave.sample_rate == 0 {
        return Err(Error::InvalidRate(wave.sample_rate));
    }
    if to_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    let kernel = PolyphaseKernel::new(wave.sample_rate, to_rate);
    let n_in = wave.len() as u64;
    let n_out = ((n_in as u128 * to_rate as u128 * 2 + wave.sample_rate as u128) / (2 * wave.sample_rate as u128)) as usize;
    let half = kernel.half as i64;
    let taps = kernel.taps();
    let mut padded = vec![0.0f32; wave.len() + 2 * taps + 2];
    let offset = taps as i64;
    padded[taps..taps + wave.len()].copy_from_slice(&wave.samples);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        let (n0, phase) = kernel.locate(j);
        let first = n0 - half + 1 + offset;
        let y = if first >= 0 && (first as usize + taps) <= padded.len() {
            kernel.dot(phase, &padded[first as usize..first as usize + taps])
        } else {
            0.0
        };
        out.push(y);
    }
    Waveform::new(out, to_rate)
}

/// Causal streaming counterpart of [`resample`].
///
/// Produces the same sample values as the offline path, delayed until the
/// right half of each output's filter support has arrived. The sequence of
/// emitted samples does not depend on how input is chunked.
#[derive(Debug, Clone)]
pub struct StreamResampler {
    kernel: Option<PolyphaseKernel>,
    from_rate: u32,
    to_rate: u32,
    buf: Vec<f32>,
    /// absolute input index of `buf[0]`
    buf_start: i64,
    next_out: u64,
}

impl StreamResampler {
    pub fn new(from_rate: u32, to_rate: u32) -> Result<Self> {
        if from_rate == 0 {
            return Err(Error::InvalidRate(from_rate));
        }
        if to_rate == 0 {
            return Err(Error::InvalidRate(to_rate));
        }
        let kernel = (from_rate != to_rate).then(|| PolyphaseKernel::new(from_rate, to_rate));
        let mut s = StreamResampler { kernel, from_rate, to_rate, buf: Vec::new(), buf_start: 0, next_out: 0 };
        s.reset();
        Ok(s)
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.next_out = 0;
        self.buf_start = 0;
        if let Some(k) = &self.kernel {
            self.buf.reserve(8 * k.taps() + 4096);
            self.buf.resize(k.half, 0.0);
            self.buf_start = -(k.half as i64);
        }
    }

    pub fn from_rate(&self) -> u32 {
        self.from_rate
    }

    pub fn to_rate(&self) -> u32 {
        self.to_rate
    }

    /// Input samples an output waits for beyond its own timestamp.
    pub fn delay_input_samples(&self) -> usize {
        self.kernel.as_ref().map_or(0, |k| k.half)
    }

    /// Input samples that must have been consumed before output `out_index`
    /// is emitted.
    pub fn inputs_needed(&self, out_index: u64) -> u64 {
        match &self.kernel {
            None => out_index + 1,
            Some(k) => (k.locate(out_index).0 + k.half as i64 + 1).max(0) as u64,
        }
    }

    /// Reserve internal capacity for chunks of up to `max_chunk` input samples.
    pub fn reserve(&mut self, max_chunk: usize) {
        let need = max_chunk + self.kernel.as_ref().map_or(0, |k| 4 * k.taps());
        if self.buf.capacity() < need {
            self.buf.reserve(need - self.buf.len());
        }
    }

    /// Consume `input`, appending every output sample that became computable.
    pub fn process(&mut self, input: &[f32], out: &mut Vec<f32>) {
        let Some(kernel) = &self.kernel else {
            out.extend_from_slice(input);
            return;
        };
        self.buf.extend_from_slice(input);
        let half = kernel.half as i64;
        let taps = kernel.taps();
        let end = self.buf_start + self.buf.len() as i64;
        loop {
            let (n0, phase) = kernel.locate(self.next_out);
            if n0 + half >= end {
                break;
            }
            let first = (n0 - half + 1 - self.buf_start) as usize;
            out.push(kernel.dot(phase, &self.buf[first..first + taps]));
            self.next_out += 1;
        }
        let (n0, _) = kernel.locate(self.next_out);
        let keep_from = n0 - half + 1;
        let drop = (keep_from - self.buf_start).clamp(0, self.buf.len() as i64) as usize;
        if drop > 0 {
            self.buf.drain(..drop);
            self.buf_start += drop as i64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        let s = (0..len).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() as f32).collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn inputs_needed_is_the_emission_threshold() {
        for (from, to) in [(48_000, 16_000), (16_000, 48_000), (44_100, 16_000), (16_000, 16_000)] {
            let mut r = StreamResampler::new(from, to).unwrap();
            let mut out = Vec::new();
            for n in 1..=3000u64 {
                let before = out.len() as u64;
                r.process(&[0.5], &mut out);
                for j in before..out.len() as u64 {
                    assert!(r.inputs_needed(j) <= n, "{from}->{to} j={j}");
                }
                assert!(r.inputs_needed(out.len() as u64) > n, "{from}->{to} n={n}");
            }
        }
    }

    #[test]
    fn length_ratio_and_identity() {
        let w = sine(1000.0, 48_000, 480);
        assert_eq!(resample(&w, 16_000).unwrap().len(), 160);
        assert_eq!(resample(&w, 48_000).unwrap(), w);
        let w = sine(1000.0, 44_100, 1001);
        assert_eq!(resample(&w, 16_000).unwrap().len(), (1001.0f64 * 16000.0 / 44100.0).round() as usize);
        assert!(matches!(resample(&w, 0), Err(Error::InvalidRate(0))));
    }

    #[test]
    fn sine_downsample_has_clean_spectrum() {
        let w = sine(1000.0, 48_000, 48_000);
        let out = resample(&w, 16_000).unwrap();
        // analyse the interior with a Blackman-Harris window
        let seg = &out.samples[2000..2000 + 8192];
        let n = seg.len();
        let mut buf: Vec<Complex<f64>> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let x = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
                let win = 0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos() - 0.01168 * (3.0 * x).cos();
                Complex::new(s as f64 * win, 0.0)
            })
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
        let peak_bin = mags.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        let peak_hz = peak_bin as f64 * 16_000.0 / n as f64;
        assert!((peak_hz - 1000.0).abs() < 16_000.0 / n as f64 * 1.5, "{peak_hz}");
        let peak = mags[peak_bin];
        let worst_sideband = mags
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as i64 - peak_bin as i64).abs() > 8)
            .map(|(_, m)| *m)
            .fold(0.0, f64::max);
        let rejection = 20.0 * (peak / worst_sideband).log10();
        assert!(rejection >= 60.0, "sideband rejection {rejection} dB");
    }

    #[test]
    fn streaming_matches_offline_values() {
        let w = sine(440.0, 48_000, 9_600);
        let offline = resample(&w, 16_000).unwrap();
        let mut s = StreamResampler::new(48_000, 16_000).unwrap();
        let mut out = Vec::new();
        for chunk in w.samples.chunks(137) {
            s.process(chunk, &mut out);
        }
        assert!(out.len() < offline.len());
        for (a, b) in out.iter().zip(&offline.samples) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn streaming_is_chunking_independent() {
        let w = sine(3000.0, 16_000, 5_000);
        let run = |sizes: &[usize]| {
            let mut s = StreamResampler::new(16_000, 48_000).unwrap();
            let mut out = Vec::new();
            let mut pos = 0;
            let mut k = 0;
            while pos < w.len() {
                let n = sizes[k % sizes.len()].min(w.len() - pos);
                s.process(&w.samples[pos..pos + n], &mut out);
                pos += n;
                k += 1;
            }
            out
        };
        assert_eq!(run(&[1]), run(&[400, 13, 999]));
    }
}
