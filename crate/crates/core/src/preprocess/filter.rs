//! Zero-phase FFT filtering: band masks and anti-aliased decimation.
//!
//! Masks act on coefficient magnitude frequency |f| with half-open [lo, hi)
//! edges, so bands that share an edge partition the spectrum without double
//! counting, and the canonical five-band split sums back to the band-limited
//! signal.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data_io::EEGEpochSet;
use crate::numerics::Tensor4;
use crate::{Error, Result};

/// Conventional EEG rhythm edges in Hz.
pub const CANONICAL_BANDS: [(&str, f64, f64); 5] = [
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 100.0),
];

/// A frequency band, canonical or custom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl BandSpec {
    /// Looks up one of the canonical rhythm names.
    pub fn named(name: &str) -> Result<BandSpec> {
        CANONICAL_BANDS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(n, lo, hi)| BandSpec { name: n.into(), lo, hi })
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown band '{name}'; expected one of delta, theta, alpha, beta, gamma"
                ))
            })
    }

    pub fn custom(name: impl Into<String>, lo: f64, hi: f64) -> BandSpec {
        BandSpec { name: name.into(), lo, hi }
    }
}

/// Applies `keep` to every row's spectrum: coefficients whose |f| fails the
/// predicate are zeroed, then the row is transformed back.
fn fft_filter_rows(x: &EEGEpochSet, keep: impl Fn(f64) -> bool) -> EEGEpochSet {
    let t = x.n_samples();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(t);
    let inverse = planner.plan_fft_inverse(t);
    // Precompute the symmetric mask once; it keeps real signals real.
    let mask: Vec<bool> = (0..t)
        .map(|k| {
            let f = if k <= t / 2 {
                k as f64 * x.sample_rate / t as f64
            } else {
                (k as f64 - t as f64) * x.sample_rate / t as f64
            };
            keep(f.abs())
        })
        .collect();
    let mut out = x.clone();
    let mut buf = vec![Complex::new(0.0f64, 0.0f64); t];
    let inv_t = 1.0 / t as f64;
    for n in 0..x.n_trials() {
        for c in 0..x.n_electrodes() {
            let row = out.epochs.row_mut(n, 0, c);
            for (b, v) in buf.iter_mut().zip(row.iter()) {
                *b = Complex::new(*v as f64, 0.0);
            }
            forward.process(&mut buf);
            for (b, keep) in buf.iter_mut().zip(&mask) {
                if !keep {
                    *b = Complex::new(0.0, 0.0);
                }
            }
            inverse.process(&mut buf);
            for (v, b) in row.iter_mut().zip(&buf) {
                *v = (b.re * inv_t) as f32;
            }
        }
    }
    out
}

/// Zero-phase band filter keeping coefficient frequencies in [lo, hi).
pub fn bandpass(x: &EEGEpochSet, band: &BandSpec) -> Result<EEGEpochSet> {
    let nyquist = x.sample_rate / 2.0;
    if !(band.lo.is_finite() && band.hi.is_finite() && 0.0 <= band.lo && band.lo < band.hi) {
        return Err(Error::Argument(format!(
            "band '{}' [{}, {}) is not a valid interval",
            band.name, band.lo, band.hi
        )));
    }
    if band.hi > nyquist {
        return Err(Error::Argument(format!(
            "band '{}' reaches {} Hz, above the Nyquist frequency {nyquist} Hz",
            band.name, band.hi
        )));
    }
    Ok(fft_filter_rows(x, |f| band.lo <= f && f < band.hi))
}

/// FFT low-pass at target_hz/2 followed by decimation.
pub fn downsample(x: &EEGEpochSet, target_hz: f64) -> Result<EEGEpochSet> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::Argument(format!(
            "target rate must be positive, got {target_hz}"
        )));
    }
    let ratio = x.sample_rate / target_hz;
    let step = ratio.round() as usize;
    if step == 0 || (ratio - step as f64).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "sample rate {} Hz is not an integer multiple of {target_hz} Hz",
            x.sample_rate
        )));
    }
    if step == 1 {
        return Ok(x.clone());
    }
    let cutoff = target_hz / 2.0;
    let filtered = fft_filter_rows(x, |f| f < cutoff);
    let (n, c, t) = (x.n_trials(), x.n_electrodes(), x.n_samples());
    let t_out = t.div_ceil(step);
    let mut epochs = Tensor4::zeros([n, 1, c, t_out]);
    for trial in 0..n {
        for ch in 0..c {
            let src = filtered.epochs.row(trial, 0, ch);
            let dst = epochs.row_mut(trial, 0, ch);
            for (i, v) in dst.iter_mut().enumerate() {
                *v = src[i * step];
            }
        }
    }
    Ok(EEGEpochSet {
        epochs,
        sample_rate: target_hz,
        channel_names: x.channel_names.clone(),
        stimulus_ids: x.stimulus_ids.clone(),
        concept_ids: x.concept_ids.clone(),
        repetition_index: x.repetition_index.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn single_row_set(row: Vec<f32>, sample_rate: f64) -> EEGEpochSet {
        let t = row.len();
        let mut epochs = Tensor4::zeros([1, 1, 1, t]);
        epochs.row_mut(0, 0, 0).copy_from_slice(&row);
        EEGEpochSet {
            epochs,
            sample_rate,
            channel_names: vec!["Cz".into()],
            stimulus_ids: vec!["img_0".into()],
            concept_ids: vec!["concept_0000".into()],
            repetition_index: vec![0],
        }
    }

    fn sine(freq: f64, t: usize, fs: f64) -> Vec<f32> {
        (0..t)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / fs).sin() as f32)
            .collect()
    }

    fn rms(v: &[f32]) -> f64 {
        (v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn in_band_sine_passes_unchanged() {
        let x = single_row_set(sine(10.0, 250, 250.0), 250.0);
        let y = bandpass(&x, &BandSpec::named("alpha").unwrap()).unwrap();
        let diff: Vec<f32> = x
            .epochs
            .data()
            .iter()
            .zip(y.epochs.data())
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&diff) < 1e-6, "rms {}", rms(&diff));
    }

    #[test]
    fn out_of_band_sine_is_rejected() {
        let x = single_row_set(sine(10.0, 250, 250.0), 250.0);
        let y = bandpass(&x, &BandSpec::named("theta").unwrap()).unwrap();
        assert!(rms(y.epochs.data()) < 1e-6 * rms(x.epochs.data()));
    }

    #[test]
    fn shared_edge_goes_to_the_upper_band() {
        // 8 Hz sits exactly on the theta/alpha edge; [lo, hi) assigns it up.
        let x = single_row_set(sine(8.0, 250, 250.0), 250.0);
        let theta = bandpass(&x, &BandSpec::named("theta").unwrap()).unwrap();
        let alpha = bandpass(&x, &BandSpec::named("alpha").unwrap()).unwrap();
        assert!(rms(theta.epochs.data()) < 1e-6);
        assert!(rms(alpha.epochs.data()) > 0.5);
    }

    #[test]
    fn band_partition_reconstructs_bandlimited_signal() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let noise: Vec<f32> = (0..250).map(|_| rng.random::<f32>() - 0.5).collect();
        let x = single_row_set(noise, 250.0);
        let limited = bandpass(&x, &BandSpec::custom("full", 0.5, 100.0)).unwrap();
        let mut sum = vec![0.0f32; 250];
        for (name, _, _) in CANONICAL_BANDS {
            let y = bandpass(&x, &BandSpec::named(name).unwrap()).unwrap();
            for (s, v) in sum.iter_mut().zip(y.epochs.data()) {
                *s += v;
            }
        }
        let diff: Vec<f32> = sum
            .iter()
            .zip(limited.epochs.data())
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&diff) < 1e-6 * rms(limited.epochs.data()).max(1e-12));
    }

    #[test]
    fn bandpass_is_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let noise: Vec<f32> = (0..250).map(|_| rng.random::<f32>() - 0.5).collect();
        let x = single_row_set(noise, 250.0);
        let band = BandSpec::named("beta").unwrap();
        let once = bandpass(&x, &band).unwrap();
        let twice = bandpass(&once, &band).unwrap();
        let diff: Vec<f32> = once
            .epochs
            .data()
            .iter()
            .zip(twice.epochs.data())
            .map(|(a, b)| a - b)
            .collect();
        assert!(rms(&diff) < 1e-6 * rms(once.epochs.data()).max(1e-12));
    }

    #[test]
    fn band_outside_nyquist_is_rejected() {
        let x = single_row_set(sine(10.0, 250, 250.0), 250.0);
        let err = bandpass(&x, &BandSpec::custom("wide", 30.0, 130.0)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)), "{err}");
        assert!(bandpass(&x, &BandSpec::custom("inverted", 13.0, 8.0)).is_err());
        assert!(BandSpec::named("mu").is_err());
    }

    #[test]
    fn downsample_keeps_constants_exactly() {
        let x = single_row_set(vec![3.25; 1000], 1000.0);
        let y = downsample(&x, 250.0).unwrap();
        assert_eq!(y.n_samples(), 250);
        assert_eq!(y.sample_rate, 250.0);
        assert!(y.epochs.data().iter().all(|v| *v == 3.25));
    }

    #[test]
    fn downsample_removes_alias_band() {
        let x = single_row_set(sine(200.0, 1000, 1000.0), 1000.0);
        let y = downsample(&x, 250.0).unwrap();
        let peak = y.epochs.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak < 0.01, "aliased peak {peak}");
    }

    #[test]
    fn downsample_preserves_low_frequencies() {
        let x = single_row_set(sine(10.0, 1000, 1000.0), 1000.0);
        let y = downsample(&x, 250.0).unwrap();
        let want = sine(10.0, 250, 250.0);
        for (a, b) in y.epochs.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn downsample_requires_integer_ratio() {
        let x = single_row_set(vec![0.0; 1000], 1000.0);
        let err = downsample(&x, 300.0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)), "{err}");
        let same = downsample(&x, 1000.0).unwrap();
        assert_eq!(same.n_samples(), 1000);
    }
}
