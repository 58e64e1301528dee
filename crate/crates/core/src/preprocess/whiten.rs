//! Multivariate noise normalization: shrinkage-regularized whitening of the
//! channel covariance.

use crate::data_io::EEGEpochSet;
use crate::numerics::{gemm, sym_eig, Mat};
use crate::{Error, Result};

/// Default diagonal shrinkage of the averaged covariance.
pub const DEFAULT_SHRINKAGE: f64 = 0.1;

/// A fitted whitening transform.
#[derive(Debug, Clone)]
pub struct WhitenOp {
    /// (C, C) symmetric inverse square root of the shrunk covariance.
    pub matrix: Mat<f64>,
    pub shrinkage: f64,
    /// Provenance note describing the fit data.
    pub source: String,
}

/// Per-trial channel covariance over time (channel rows centered, T−1
/// denominator), averaged over trials.
fn average_covariance(x: &EEGEpochSet) -> Mat<f64> {
    let (n, c, t) = (x.n_trials(), x.n_electrodes(), x.n_samples());
    let mut cov = vec![0.0f64; c * c];
    let mut centered = vec![0.0f64; c * t];
    let alpha = 1.0 / (t as f64 - 1.0);
    for trial in 0..n {
        for ch in 0..c {
            let row = x.epochs.row(trial, 0, ch);
            let mean = row.iter().map(|v| *v as f64).sum::<f64>() / t as f64;
            for (dst, v) in centered[ch * t..(ch + 1) * t].iter_mut().zip(row) {
                *dst = *v as f64 - mean;
            }
        }
        gemm(c, t, c, alpha, &centered, false, &centered, true, 1.0, &mut cov);
    }
    let inv_n = 1.0 / n as f64;
    for v in &mut cov {
        *v *= inv_n;
    }
    Mat::from_vec(c, c, cov).expect("covariance shape")
}

/// Fits a whitening operator on training trials.
///
/// The averaged covariance is shrunk toward its diagonal,
/// Σ' = (1−λ)Σ + λ·diag(Σ), and the operator is Σ'^(−1/2) from a symmetric
/// eigendecomposition.
pub fn fit_whitener(x: &EEGEpochSet, shrinkage: f64) -> Result<WhitenOp> {
    let (n, c, t) = (x.n_trials(), x.n_electrodes(), x.n_samples());
    if c < 2 {
        return Err(Error::Argument(format!(
            "whitening needs at least 2 channels, got {c}"
        )));
    }
    if t < 2 {
        return Err(Error::Argument(format!(
            "covariance over time needs at least 2 samples, got {t}"
        )));
    }
    if n * t <= c {
        return Err(Error::Argument(format!(
            "{n} trials x {t} samples cannot estimate a {c}-channel covariance"
        )));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Argument(format!(
            "shrinkage must lie in [0, 1], got {shrinkage}"
        )));
    }
    let mut sigma = average_covariance(x);
    for i in 0..c {
        for j in 0..c {
            if i != j {
                let v = sigma.at(i, j) * (1.0 - shrinkage);
                sigma.set(i, j, v);
            }
        }
    }
    let (eigvals, eigvecs) = sym_eig(&sigma)?;
    let max_eig = eigvals.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-12 * max_eig.max(1.0);
    if eigvals.iter().any(|&l| l <= floor) {
        return Err(Error::Numerical(format!(
            "shrunk covariance is singular (min eigenvalue {:.3e}); raise the shrinkage above {shrinkage}",
            eigvals.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    // W = V diag(1/sqrt(l)) V^T, symmetrized to cancel rounding asymmetry.
    let mut scaled = Mat::zeros(c, c);
    for i in 0..c {
        for (j, &l) in eigvals.iter().enumerate() {
            scaled.set(i, j, eigvecs.at(i, j) / l.sqrt());
        }
    }
    let mut w = vec![0.0f64; c * c];
    gemm(c, c, c, 1.0, scaled.data(), false, eigvecs.data(), true, 0.0, &mut w);
    let mut matrix = Mat::from_vec(c, c, w)?;
    for i in 0..c {
        for j in (i + 1)..c {
            let s = 0.5 * (matrix.at(i, j) + matrix.at(j, i));
            matrix.set(i, j, s);
            matrix.set(j, i, s);
        }
    }
    Ok(WhitenOp {
        matrix,
        shrinkage,
        source: format!("fit on {n} trials of {t} samples, shrinkage {shrinkage}"),
    })
}

/// Left-multiplies every trial's (C, T) block by the whitening matrix.
pub fn apply_whitener(op: &WhitenOp, x: &EEGEpochSet) -> Result<EEGEpochSet> {
    let (c, t) = (x.n_electrodes(), x.n_samples());
    if op.matrix.rows() != c {
        return Err(Error::Dim(format!(
            "whitener fit for {} channels applied to {c}",
            op.matrix.rows()
        )));
    }
    let mut out = x.clone();
    let mut trial_f64 = vec![0.0f64; c * t];
    let mut product = vec![0.0f64; c * t];
    for n in 0..x.n_trials() {
        for (dst, v) in trial_f64.iter_mut().zip(x.epochs.trial(n)) {
            *dst = *v as f64;
        }
        gemm(c, c, t, 1.0, op.matrix.data(), false, &trial_f64, false, 0.0, &mut product);
        for (dst, v) in out.epochs.trial_mut(n).iter_mut().zip(&product) {
            *dst = *v as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn gauss(rng: &mut ChaCha12Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Trials whose channels mix a common source; `own_weight` sets how much
    /// independent noise dilutes the shared component (correlation is
    /// 1 / (1 + own_weight^2)).
    fn correlated_set(n: usize, c: usize, t: usize, own_weight: f64, seed: u64) -> EEGEpochSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut epochs = Tensor4::zeros([n, 1, c, t]);
        for trial in 0..n {
            for s in 0..t {
                let shared = gauss(&mut rng);
                for ch in 0..c {
                    let own = gauss(&mut rng);
                    let scale = 1.0 + ch as f64 * 0.5;
                    epochs.set(trial, 0, ch, s, (scale * (shared + own_weight * own)) as f32);
                }
            }
        }
        EEGEpochSet {
            epochs,
            sample_rate: 250.0,
            channel_names: (0..c).map(|i| format!("ch_{i:02}")).collect(),
            stimulus_ids: (0..n).map(|i| format!("img_{i}")).collect(),
            concept_ids: vec!["concept_0000".into(); n],
            repetition_index: vec![0; n],
        }
    }

    fn white_set(n: usize, c: usize, t: usize, seed: u64) -> EEGEpochSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut epochs = Tensor4::zeros([n, 1, c, t]);
        for v in epochs.data_mut() {
            *v = gauss(&mut rng) as f32;
        }
        EEGEpochSet {
            epochs,
            sample_rate: 250.0,
            channel_names: (0..c).map(|i| format!("ch_{i:02}")).collect(),
            stimulus_ids: (0..n).map(|i| format!("img_{i}")).collect(),
            concept_ids: vec!["concept_0000".into(); n],
            repetition_index: vec![0; n],
        }
    }

    #[test]
    fn white_data_gives_near_identity_whitener() {
        // 5e4 effective samples put the sampling noise well under the bound.
        let x = white_set(200, 8, 250, 3);
        let op = fit_whitener(&x, 0.0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (op.matrix.at(i, j) - want).abs() < 1e-2,
                    "W[{i},{j}] = {}",
                    op.matrix.at(i, j)
                );
            }
        }
    }

    #[test]
    fn zero_shrinkage_whitening_is_exact_on_fit_data() {
        // W Σ W = I holds definitionally at λ=0, whatever the correlation.
        let x = correlated_set(40, 6, 200, 0.5, 4);
        let op = fit_whitener(&x, 0.0).unwrap();
        let y = apply_whitener(&op, &x).unwrap();
        let cov = average_covariance(&y);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                // f32 storage of whitened trials caps the achievable accuracy.
                assert!(
                    (cov.at(i, j) - want).abs() < 1e-5,
                    "cov[{i},{j}] = {}",
                    cov.at(i, j)
                );
            }
        }
    }

    #[test]
    fn whitened_covariance_is_near_identity() {
        // Default shrinkage distorts the result by O(λρ); moderate channel
        // correlation keeps it inside the 5e-2 band.
        let x = correlated_set(40, 6, 200, 2.0, 4);
        let op = fit_whitener(&x, DEFAULT_SHRINKAGE).unwrap();
        let y = apply_whitener(&op, &x).unwrap();
        let cov = average_covariance(&y);
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov.at(i, j) - want).abs() < 5e-2,
                    "cov[{i},{j}] = {}",
                    cov.at(i, j)
                );
            }
        }
    }

    #[test]
    fn whitener_is_symmetric() {
        let x = correlated_set(20, 5, 100, 0.5, 5);
        let op = fit_whitener(&x, 0.2).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(op.matrix.at(i, j), op.matrix.at(j, i));
            }
        }
    }

    #[test]
    fn full_shrinkage_gives_diagonal_whitener() {
        let x = correlated_set(20, 5, 100, 0.5, 6);
        let op = fit_whitener(&x, 1.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(op.matrix.at(i, j), 0.0);
                } else {
                    assert!(op.matrix.at(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn singular_covariance_advises_shrinkage() {
        // Two perfectly correlated channels make Σ rank-deficient at λ=0.
        let mut x = white_set(10, 2, 50, 7);
        for trial in 0..x.n_trials() {
            let row0: Vec<f32> = x.epochs.row(trial, 0, 0).to_vec();
            x.epochs.row_mut(trial, 0, 1).copy_from_slice(&row0);
        }
        let err = fit_whitener(&x, 0.0).unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("raise the shrinkage"), "{msg}"),
            other => panic!("expected numerical error, got {other}"),
        }
        assert!(fit_whitener(&x, 0.5).is_ok());
    }

    #[test]
    fn preconditions_are_checked() {
        let x = white_set(10, 1, 50, 8);
        assert!(matches!(fit_whitener(&x, 0.1), Err(Error::Argument(_))));
        let x = white_set(1, 8, 4, 9);
        assert!(matches!(fit_whitener(&x, 0.1), Err(Error::Argument(_))));
        let x = white_set(10, 4, 50, 10);
        assert!(matches!(fit_whitener(&x, 1.5), Err(Error::Argument(_))));
        let op = fit_whitener(&x, 0.1).unwrap();
        let y = white_set(2, 5, 50, 11);
        assert!(matches!(apply_whitener(&op, &y), Err(Error::Dim(_))));
    }
}
