//! A-weighted level metering.
//!
//! The IEC 61672 A-weighting magnitude response is applied in the frequency
//! domain over the whole analysis block, so the result is exact per bin rather
//! than a bilinear approximation that warps near Nyquist.

use super::Waveform;
use crate::error::{Error, Result};
use rustfft::{num_complex::Complex, FftPlanner};

/// Level reported by a full-scale 1 kHz sine.
pub const REFERENCE_DBA: f64 = 94.0;
pub const LEVEL_FLOOR_DBA: f64 = -120.0;

fn ra(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.598_997f64.powi(2);
    let c2 = 107.652_65f64.powi(2);
    let c3 = 737.862_23f64.powi(2);
    let c4 = 12_194.217f64.powi(2);
    c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// A-weighting gain in dB, normalised to exactly 0 dB at 1 kHz.
pub fn a_weight_gain_db(freq_hz: f64) -> f64 {
    20.0 * (ra(freq_hz) / ra(1000.0)).log10()
}

pub fn a_weighted_level(wave: &Waveform) -> Result<f64> {
    a_weighted_level_with_reference(wave, REFERENCE_DBA)
}

/// `reference_dba` is the reading of a full-scale 1 kHz sine.
pub fn a_weighted_level_with_reference(wave: &Waveform, reference_dba: f64) -> Result<f64> {
    let n = wave.len();
    if n == 0 {
        return Err(Error::UndefinedLevel);
    }
    let mut buf: Vec<Complex<f64>> = wave.samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let rate = wave.sample_rate as f64;
    let mut energy = 0.0;
    for (k, x) in buf.iter().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * rate / n as f64;
        let g = ra(f) / ra(1000.0);
        energy += x.norm_sqr() * g * g;
    }
    let mean_square = energy / (n as f64 * n as f64);
    if mean_square <= 0.0 {
        return Ok(LEVEL_FLOOR_DBA);
    }
    // full-scale sine has mean square 1/2
    let level = 10.0 * mean_square.log10() + reference_dba - 10.0 * 0.5f64.log10();
    Ok(level.max(LEVEL_FLOOR_DBA))
}
