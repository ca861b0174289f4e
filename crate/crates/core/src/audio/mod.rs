//! Waveforms, WAV I/O, resampling, A-weighted levels, STFT and rolling capture.

mod resample;
mod rolling;
mod stft;
mod wav;
mod weighting;

pub use resample::{resample, StreamResampler, TAPS_PER_SIDE};
pub use rolling::RollingBuffer;
pub use stft::{istft, istft_into, sqrt_hann, stft, stft_into, ComplexSpectrogram, StftPlan, HOP_SIZE, WINDOW_SIZE};
pub use wav::{read_wav, write_wav, WavEncoding};
pub use weighting::{a_weight_gain_db, a_weighted_level, a_weighted_level_with_reference, LEVEL_FLOOR_DBA, REFERENCE_DBA};

use crate::error::{Error, Result};

/// Model-side sample rate.
pub const MODEL_RATE: u32 = 16_000;

/// Mono sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Waveform { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared sample value (0 for empty input).
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f32) -> Waveform {
        Waveform { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

pub(crate) fn mean_power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64
}
