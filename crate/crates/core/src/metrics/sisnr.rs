//! Scale-invariant SNR between a reference and an estimate.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper cap and lower floor on reported SI-SNR, in dB.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// `(10 log10(‖s_t‖²/‖e‖²))` clamped to ±60 dB, plus its gradient with
/// respect to the estimate (zero when the clamp is active).
pub fn si_snr_with_grad<T: Scalar>(reference: &[T], estimate: &[T], grad: Option<&mut [T]>) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let n = reference.len();
    if n == 0 {
        return Err(Error::ZeroReference);
    }
    let inv_n = 1.0 / n as f64;
    let mean_s = reference.iter().map(|v| v.to_f64_lossy()).sum::<f64>() * inv_n;
    let mean_x = estimate.iter().map(|v| v.to_f64_lossy()).sum::<f64>() * inv_n;
    let (mut ss, mut xs, mut xx) = (0.0f64, 0.0f64, 0.0f64);
    for (r, e) in reference.iter().zip(estimate) {
        let s = r.to_f64_lossy() - mean_s;
        let x = e.to_f64_lossy() - mean_x;
        ss += s * s;
        xs += x * s;
        xx += x * x;
    }
    if ss <= 0.0 || !ss.is_finite() {
        return Err(Error::ZeroReference);
    }
    if !xx.is_finite() {
        return Err(Error::Numeric("non-finite estimate".into()));
    }
    // ‖s_t‖² = ⟨x,s⟩²/⟨s,s⟩ and ‖e‖² = ‖x‖² − ‖s_t‖²
    let a = xs * xs / ss;
    let b = (xx - a).max(0.0);
    let raw = if b == 0.0 {
        f64::INFINITY
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * (a / b).log10()
    };
    let clamped = raw.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB);
    if let Some(g) = grad {
        let active = raw > -SI_SNR_CAP_DB && raw < SI_SNR_CAP_DB;
        if !active {
            g.iter_mut().for_each(|v| *v = T::zero());
        } else {
            let k = 10.0 / std::f64::consts::LN_10;
            let alpha = xs / ss;
            let mut mean_g = 0.0;
            for ((gv, r), e) in g.iter_mut().zip(reference).zip(estimate) {
                let s = r.to_f64_lossy() - mean_s;
                let x = e.to_f64_lossy() - mean_x;
                let st = alpha * s;
                let v = k * (2.0 * st / a - 2.0 * (x - st) / b);
                mean_g += v;
                *gv = T::lit(v);
            }
            let mean_g = T::lit(mean_g * inv_n);
            g.iter_mut().for_each(|v| *v -= mean_g);
        }
    }
    Ok(clamped)
}

/// SI-SNR of `estimate` against `reference`, in dB.
pub fn si_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_snr_with_grad::<f32>(&reference.samples, &estimate.samples, None)
}

/// Improvement of `estimate` over `mixture`, both scored against `reference`.
pub fn si_snri(mixture: &Waveform, estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    Ok(si_snr(reference, estimate)? - si_snr(reference, mixture)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f32>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    #[test]
    fn identical_signals_hit_the_cap() {
        let s = wave((0..500).map(|i| (i as f32 * 0.1).sin()).collect());
        assert_eq!(si_snr(&s, &s).unwrap(), 60.0);
    }

    #[test]
    fn orthogonal_equal_power_noise_is_zero_db() {
        let n = 1000;
        let s: Vec<f32> = (0..n).map(|i| (2.0 * std::f32::consts::PI * 5.0 * i as f32 / n as f32).sin()).collect();
        let noise: Vec<f32> = (0..n).map(|i| (2.0 * std::f32::consts::PI * 7.0 * i as f32 / n as f32).sin()).collect();
        let est: Vec<f32> = s.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let v = si_snr(&wave(s), &wave(est)).unwrap();
        assert!(v.abs() < 1e-4, "{v}");
    }

    #[test]
    fn errors_on_bad_input() {
        let a = wave(vec![0.0; 10]);
        let b = wave(vec![1.0; 10]);
        assert!(matches!(si_snr(&a, &b), Err(Error::ZeroReference)));
        assert!(matches!(si_snr(&b, &wave(vec![1.0; 9])), Err(Error::LengthMismatch(10, 9))));
    }

    #[test]
    fn improvement_is_zero_without_processing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = wave((0..300).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let m = wave((0..300).map(|_| rng.gen_range(-1.0..1.0)).collect());
        assert_eq!(si_snri(&m, &m, &r).unwrap(), 0.0);
        let cap_gap = si_snri(&m, &r, &r).unwrap();
        assert!((cap_gap - (60.0 - si_snr(&r, &m).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = r.iter().map(|v| v + rng.gen_range(-0.8..0.8)).collect();
        let mut g = vec![0.0; 100];
        si_snr_with_grad(&r, &x, Some(&mut g)).unwrap();
        let eps = 1e-6;
        for i in 0..100 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += eps;
            m[i] -= eps;
            let num = (si_snr_with_grad(&r, &p, None).unwrap() - si_snr_with_grad(&r, &m, None).unwrap()) / (2.0 * eps);
            assert!((num - g[i]).abs() <= 1e-3 * num.abs().max(g[i].abs()).max(1e-6), "{i}: {num} vs {}", g[i]);
        }
    }
}
