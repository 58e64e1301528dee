//! Morlet wavelet time-frequency power maps.
//!
//! Fixed-cycle complex Morlet kernels, normalized to unit discrete energy,
//! correlated directly with the zero-padded signal. Direct convolution keeps
//! every value auditable against a hand computation; the grids involved are
//! small enough that FFT acceleration would buy nothing but opacity.

use crate::data_io::EEGEpochSet;
use crate::numerics::Mat;
use crate::{Error, Result};

/// Cycles per wavelet, constant across frequencies.
pub const MORLET_CYCLES: f64 = 7.0;

/// The default analysis grid: 2, 4, ..., 100 Hz.
pub fn default_tfr_freqs() -> Vec<f64> {
    (1..=50).map(|k| 2.0 * k as f64).collect()
}

/// Complex Morlet kernel at `f` Hz, returned as (re, im, half-width).
fn morlet(f: f64, fs: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let sigma_t = MORLET_CYCLES / (2.0 * std::f64::consts::PI * f);
    // 3.5 sigma covers all but ~0.05% of the envelope mass.
    let half = (3.5 * sigma_t * fs).ceil() as usize;
    let len = 2 * half + 1;
    let mut wr = Vec::with_capacity(len);
    let mut wi = Vec::with_capacity(len);
    let mut energy = 0.0;
    for k in 0..len {
        let tau = (k as f64 - half as f64) / fs;
        let g = (-tau * tau / (2.0 * sigma_t * sigma_t)).exp();
        let phase = 2.0 * std::f64::consts::PI * f * tau;
        let re = g * phase.cos();
        let im = g * phase.sin();
        energy += re * re + im * im;
        wr.push(re);
        wi.push(im);
    }
    let scale = 1.0 / energy.sqrt();
    for v in &mut wr {
        *v *= scale;
    }
    for v in &mut wi {
        *v *= scale;
    }
    (wr, wi, half)
}

/// Wavelet power per (frequency, sample), averaged over trials and the
/// selected channels. Power is computed per trial before averaging, so
/// non-phase-locked activity survives.
pub fn time_frequency(x: &EEGEpochSet, channels: &[usize], freqs: &[f64]) -> Result<Mat<f64>> {
    let [n, _, c, t] = x.epochs.dims();
    if n == 0 {
        return Err(Error::Argument("no trials to analyze".into()));
    }
    if channels.is_empty() {
        return Err(Error::Argument("empty channel selection".into()));
    }
    for &ch in channels {
        if ch >= c {
            return Err(Error::Argument(format!(
                "channel {ch} out of range for {c} channels"
            )));
        }
    }
    if freqs.is_empty() {
        return Err(Error::Argument("no frequencies requested".into()));
    }
    let fs = x.sample_rate;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Argument(format!("sampling rate {fs} Hz is not usable")));
    }
    let nyquist = fs / 2.0;
    for &f in freqs {
        if !(f.is_finite() && f > 0.0 && f <= nyquist) {
            return Err(Error::Argument(format!(
                "frequency {f} Hz is outside (0, {nyquist}] at {fs} Hz sampling"
            )));
        }
    }
    let mut out = Mat::zeros(freqs.len(), t);
    let inv_count = 1.0 / (n * channels.len()) as f64;
    for (fi, &f) in freqs.iter().enumerate() {
        let (wr, wi, half) = morlet(f, fs);
        let row = out.row_mut(fi);
        for trial in 0..n {
            for &ch in channels {
                let sig = x.epochs.row(trial, 0, ch);
                for (s, dst) in row.iter_mut().enumerate() {
                    // Kernel tap k lines up with sample s + k - half;
                    // out-of-range taps read an implicit zero.
                    let k0 = half.saturating_sub(s);
                    let k1 = (t + half - s).min(wr.len());
                    let mut zr = 0.0;
                    let mut zi = 0.0;
                    for k in k0..k1 {
                        let v = sig[s + k - half] as f64;
                        zr += v * wr[k];
                        zi += v * wi[k];
                    }
                    *dst += (zr * zr + zi * zi) * inv_count;
                }
            }
        }
    }
    Ok(out)
}
