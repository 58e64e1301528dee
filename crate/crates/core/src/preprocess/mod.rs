//! Deterministic signal conditioning: baseline correction, decimation,
//! multivariate noise normalization, repetition averaging, and the masking
//! transforms the ablation analyses build on.
//!
//! Every operation is pure per trial and returns a new epoch set; results do
//! not depend on scheduling.

mod filter;
mod montage;
mod whiten;

pub use filter::{bandpass, downsample, BandSpec, CANONICAL_BANDS};
pub use montage::{
    ablate_region, electrodes_in_region, parse_region_overrides, region_of, Region,
};
pub use whiten::{apply_whitener, fit_whitener, WhitenOp, DEFAULT_SHRINKAGE};

use std::collections::HashMap;

use crate::data_io::EEGEpochSet;
use crate::numerics::{Mat, Tensor4};
use crate::{Error, Result};

/// Pre-stimulus window used for baseline correction by default, in ms.
pub const DEFAULT_BASELINE_MS: f64 = 200.0;

fn ms_to_sample(ms: f64, sample_rate: f64) -> usize {
    (ms * sample_rate / 1000.0).round() as usize
}

/// Subtracts the per-trial, per-channel mean of the first `pre_ms` of the
/// epoch from the whole channel row.
pub fn baseline_correct(x: &EEGEpochSet, pre_ms: f64) -> Result<EEGEpochSet> {
    if !(pre_ms.is_finite() && pre_ms > 0.0) {
        return Err(Error::Argument(format!(
            "pre-stimulus window must be positive, got {pre_ms} ms"
        )));
    }
    let n_pre = ms_to_sample(pre_ms, x.sample_rate);
    let t = x.n_samples();
    if n_pre == 0 {
        return Err(Error::Argument(format!(
            "{pre_ms} ms covers no full sample at {} Hz",
            x.sample_rate
        )));
    }
    if n_pre > t {
        return Err(Error::Argument(format!(
            "epochs of {t} samples carry no {n_pre}-sample pre-stimulus segment"
        )));
    }
    let mut out = x.clone();
    for n in 0..x.n_trials() {
        for c in 0..x.n_electrodes() {
            let row = out.epochs.row_mut(n, 0, c);
            let mean = row[..n_pre].iter().map(|v| *v as f64).sum::<f64>() / n_pre as f64;
            for v in row.iter_mut() {
                *v = (*v as f64 - mean) as f32;
            }
        }
    }
    Ok(out)
}

/// Baseline correction from separately supplied per-(trial, channel) means,
/// for epochs whose pre-stimulus segment was already cropped away.
pub fn baseline_correct_with_means(x: &EEGEpochSet, means: &Mat<f64>) -> Result<EEGEpochSet> {
    if means.rows() != x.n_trials() || means.cols() != x.n_electrodes() {
        return Err(Error::Argument(format!(
            "baseline means are ({}, {}) for {} trials of {} electrodes",
            means.rows(),
            means.cols(),
            x.n_trials(),
            x.n_electrodes()
        )));
    }
    let mut out = x.clone();
    for n in 0..x.n_trials() {
        for c in 0..x.n_electrodes() {
            let mean = means.at(n, c);
            for v in out.epochs.row_mut(n, 0, c) {
                *v = (*v as f64 - mean) as f32;
            }
        }
    }
    Ok(out)
}

/// Keeps the half-open sample range [start, end) of every trial.
pub fn crop_samples(x: &EEGEpochSet, start: usize, end: usize) -> Result<EEGEpochSet> {
    let t = x.n_samples();
    if !(start < end && end <= t) {
        return Err(Error::Argument(format!(
            "crop [{start}, {end}) must satisfy 0 <= start < end <= {t}"
        )));
    }
    let (n, c) = (x.n_trials(), x.n_electrodes());
    let mut epochs = Tensor4::zeros([n, 1, c, end - start]);
    for trial in 0..n {
        for ch in 0..c {
            epochs
                .row_mut(trial, 0, ch)
                .copy_from_slice(&x.epochs.row(trial, 0, ch)[start..end]);
        }
    }
    Ok(EEGEpochSet {
        epochs,
        sample_rate: x.sample_rate,
        channel_names: x.channel_names.clone(),
        stimulus_ids: x.stimulus_ids.clone(),
        concept_ids: x.concept_ids.clone(),
        repetition_index: x.repetition_index.clone(),
    })
}

/// One stimulus with the trials selected for averaging.
pub(crate) struct RepetitionGroup {
    pub stimulus: String,
    pub concept: String,
    /// Trial indices in ascending repetition order, `n_reps` of them when
    /// a count was requested.
    pub trials: Vec<usize>,
}

/// Groups trials by stimulus: first-occurrence stimulus order, trials sorted
/// by ascending `repetition_index`, truncated to the first `n_reps` when
/// given. This is the one selection rule every repetition-averaging path
/// shares.
pub(crate) fn repetition_groups(
    x: &EEGEpochSet,
    n_reps: Option<usize>,
) -> Result<Vec<RepetitionGroup>> {
    if n_reps == Some(0) {
        return Err(Error::Argument("cannot average zero repetitions".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, sid) in x.stimulus_ids.iter().enumerate() {
        let entry = groups.entry(sid.as_str()).or_default();
        if entry.is_empty() {
            order.push(sid.as_str());
        }
        entry.push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    for sid in order {
        let mut trials = groups.remove(sid).expect("grouped above");
        trials.sort_by_key(|&i| x.repetition_index[i]);
        if let Some(k) = n_reps {
            if trials.len() < k {
                return Err(Error::Argument(format!(
                    "stimulus '{sid}' has {} repetitions, {k} requested",
                    trials.len()
                )));
            }
            trials.truncate(k);
        }
        let concept = &x.concept_ids[trials[0]];
        for &i in &trials {
            if &x.concept_ids[i] != concept {
                return Err(Error::Integrity(format!(
                    "stimulus '{sid}' maps to concepts '{concept}' and '{}'",
                    x.concept_ids[i]
                )));
            }
        }
        out.push(RepetitionGroup {
            stimulus: sid.to_string(),
            concept: concept.clone(),
            trials,
        });
    }
    Ok(out)
}

/// Collapses repetitions of each stimulus into their mean trial.
///
/// Stimuli keep their first-occurrence order; within a stimulus, repetitions
/// are taken in ascending `repetition_index` order and, when `n_reps` is
/// given, only the first `n_reps` contribute.
pub fn average_repetitions(x: &EEGEpochSet, n_reps: Option<usize>) -> Result<EEGEpochSet> {
    let groups = repetition_groups(x, n_reps)?;
    let (c, t) = (x.n_electrodes(), x.n_samples());
    let mut epochs = Tensor4::zeros([groups.len(), 1, c, t]);
    let mut stimulus_ids = Vec::with_capacity(groups.len());
    let mut concept_ids = Vec::with_capacity(groups.len());
    let mut acc = vec![0.0f64; c * t];
    for (g, group) in groups.iter().enumerate() {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &i in &group.trials {
            for (a, v) in acc.iter_mut().zip(x.epochs.trial(i)) {
                *a += *v as f64;
            }
        }
        let inv = 1.0 / group.trials.len() as f64;
        for (dst, a) in epochs.trial_mut(g).iter_mut().zip(&acc) {
            *dst = (a * inv) as f32;
        }
        stimulus_ids.push(group.stimulus.clone());
        concept_ids.push(group.concept.clone());
    }
    let n_out = groups.len();
    Ok(EEGEpochSet {
        epochs,
        sample_rate: x.sample_rate,
        channel_names: x.channel_names.clone(),
        stimulus_ids,
        concept_ids,
        repetition_index: vec![0; n_out],
    })
}

/// Zeroes every sample outside the kept [start_ms, end_ms) window.
pub fn mask_time_window(x: &EEGEpochSet, keep_ms: (f64, f64)) -> Result<EEGEpochSet> {
    let (start_ms, end_ms) = keep_ms;
    if !(start_ms.is_finite() && end_ms.is_finite() && start_ms >= 0.0) {
        return Err(Error::Argument(format!(
            "window [{start_ms}, {end_ms}) ms must be finite and non-negative"
        )));
    }
    let start = ms_to_sample(start_ms, x.sample_rate);
    let end = ms_to_sample(end_ms, x.sample_rate);
    let t = x.n_samples();
    if !(start < end && end <= t) {
        return Err(Error::Argument(format!(
            "window [{start_ms}, {end_ms}) ms maps to samples [{start}, {end}) outside 0..{t}"
        )));
    }
    let mut out = x.clone();
    for n in 0..x.n_trials() {
        for c in 0..x.n_electrodes() {
            let row = out.epochs.row_mut(n, 0, c);
            row[..start].fill(0.0);
            row[end..].fill(0.0);
        }
    }
    Ok(out)
}

/// Zeroes the listed electrodes in every trial, preserving shape.
pub fn ablate_electrodes(x: &EEGEpochSet, channels: &[usize]) -> Result<EEGEpochSet> {
    let c = x.n_electrodes();
    for &ch in channels {
        if ch >= c {
            return Err(Error::Argument(format!(
                "electrode {ch} out of range for {c} channels"
            )));
        }
    }
    let mut out = x.clone();
    for n in 0..x.n_trials() {
        for &ch in channels {
            out.epochs.row_mut(n, 0, ch).fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_from_rows(rows: Vec<Vec<f32>>, sample_rate: f64) -> EEGEpochSet {
        // One trial per row, single channel.
        let t = rows[0].len();
        let n = rows.len();
        let mut epochs = Tensor4::zeros([n, 1, 1, t]);
        for (i, r) in rows.iter().enumerate() {
            epochs.row_mut(i, 0, 0).copy_from_slice(r);
        }
        EEGEpochSet {
            epochs,
            sample_rate,
            channel_names: vec!["Cz".into()],
            stimulus_ids: (0..n).map(|i| format!("img_{i}")).collect(),
            concept_ids: vec!["concept_0000".into(); n],
            repetition_index: vec![0; n],
        }
    }

    #[test]
    fn baseline_removes_constant() {
        let x = set_from_rows(vec![vec![7.0; 8]], 1000.0);
        let y = baseline_correct(&x, 4.0).unwrap();
        assert!(y.epochs.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn baseline_subtracts_window_mean() {
        let x = set_from_rows(vec![vec![3.0, 3.0, 5.0, 5.0]], 1000.0);
        let y = baseline_correct(&x, 2.0).unwrap();
        assert_eq!(y.epochs.row(0, 0, 0), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_baseline_is_identity() {
        let x = set_from_rows(vec![vec![0.0, 0.0, 1.5, -2.5]], 1000.0);
        let y = baseline_correct(&x, 2.0).unwrap();
        assert_eq!(y.epochs.data(), x.epochs.data());
    }

    #[test]
    fn baseline_requires_segment() {
        let x = set_from_rows(vec![vec![1.0; 4]], 1000.0);
        assert!(matches!(baseline_correct(&x, 5.0), Err(Error::Argument(_))));
        assert!(matches!(baseline_correct(&x, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn supplied_means_are_subtracted() {
        let x = set_from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 1000.0);
        let means = Mat::from_vec(2, 1, vec![1.0, 3.0]).unwrap();
        let y = baseline_correct_with_means(&x, &means).unwrap();
        assert_eq!(y.epochs.trial(0), &[0.0, 1.0]);
        assert_eq!(y.epochs.trial(1), &[0.0, 1.0]);
    }

    #[test]
    fn crop_keeps_range() {
        let x = set_from_rows(vec![vec![1.0, 2.0, 3.0, 4.0]], 1000.0);
        let y = crop_samples(&x, 1, 3).unwrap();
        assert_eq!(y.epochs.trial(0), &[2.0, 3.0]);
        assert!(crop_samples(&x, 3, 3).is_err());
        assert!(crop_samples(&x, 0, 5).is_err());
    }

    fn repeated_set() -> EEGEpochSet {
        let mut x = set_from_rows(
            vec![
                vec![1.0, 1.0],
                vec![3.0, 3.0],
                vec![2.0, -2.0],
                vec![-2.0, 2.0],
            ],
            1000.0,
        );
        x.stimulus_ids = vec!["a".into(), "a".into(), "b".into(), "b".into()];
        x.repetition_index = vec![0, 1, 0, 1];
        x
    }

    #[test]
    fn repetitions_average_and_cancel() {
        let y = average_repetitions(&repeated_set(), None).unwrap();
        assert_eq!(y.n_trials(), 2);
        assert_eq!(y.stimulus_ids, vec!["a", "b"]);
        assert_eq!(y.epochs.trial(0), &[2.0, 2.0]);
        assert_eq!(y.epochs.trial(1), &[0.0, 0.0]);
        assert_eq!(y.repetition_index, vec![0, 0]);
    }

    #[test]
    fn identical_repetitions_average_to_themselves() {
        let mut x = repeated_set();
        x.epochs.trial_mut(1).copy_from_slice(&[1.0, 1.0]);
        let y = average_repetitions(&x, Some(2)).unwrap();
        assert_eq!(y.epochs.trial(0), &[1.0, 1.0]);
    }

    #[test]
    fn first_n_reps_follow_repetition_index() {
        let mut x = repeated_set();
        // Stored out of order: repetition 1 appears before repetition 0.
        x.repetition_index = vec![1, 0, 0, 1];
        let y = average_repetitions(&x, Some(1)).unwrap();
        // Stimulus "a": repetition 0 is the second stored trial.
        assert_eq!(y.epochs.trial(0), &[3.0, 3.0]);
    }

    #[test]
    fn too_many_reps_requested() {
        let err = average_repetitions(&repeated_set(), Some(3)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)), "{err}");
    }

    #[test]
    fn mask_keeps_half_open_window() {
        let x = set_from_rows(vec![vec![1.0; 10]], 1000.0);
        let y = mask_time_window(&x, (2.0, 5.0)).unwrap();
        assert_eq!(
            y.epochs.row(0, 0, 0),
            &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn mask_full_range_is_identity_and_idempotent() {
        let x = set_from_rows(vec![vec![1.0, -2.0, 3.0, -4.0]], 1000.0);
        let y = mask_time_window(&x, (0.0, 4.0)).unwrap();
        assert_eq!(y.epochs.data(), x.epochs.data());
        let m = mask_time_window(&x, (1.0, 3.0)).unwrap();
        let mm = mask_time_window(&m, (1.0, 3.0)).unwrap();
        assert_eq!(m.epochs.data(), mm.epochs.data());
    }

    #[test]
    fn empty_or_inverted_masks_are_rejected() {
        let x = set_from_rows(vec![vec![1.0; 10]], 1000.0);
        assert!(matches!(mask_time_window(&x, (0.0, 0.0)), Err(Error::Argument(_))));
        assert!(matches!(mask_time_window(&x, (5.0, 2.0)), Err(Error::Argument(_))));
    }

    #[test]
    fn ablation_zeroes_channels() {
        let mut epochs = Tensor4::zeros([1, 1, 3, 2]);
        epochs.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = EEGEpochSet {
            epochs,
            sample_rate: 250.0,
            channel_names: vec!["Fz".into(), "Cz".into(), "Oz".into()],
            stimulus_ids: vec!["img_0".into()],
            concept_ids: vec!["concept_0000".into()],
            repetition_index: vec![0],
        };
        let y = ablate_electrodes(&x, &[1]).unwrap();
        assert_eq!(y.epochs.trial(0), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        let all = ablate_electrodes(&x, &[0, 1, 2]).unwrap();
        assert!(all.epochs.data().iter().all(|v| *v == 0.0));
        let none = ablate_electrodes(&x, &[]).unwrap();
        assert_eq!(none.epochs.data(), x.epochs.data());
        assert!(ablate_electrodes(&x, &[3]).is_err());
    }

    #[test]
    fn averaging_commutes_with_baseline() {
        // Both maps are affine per channel with trial-constant offsets.
        let mut x = repeated_set();
        x.epochs.trial_mut(0).copy_from_slice(&[1.0, 5.0]);
        x.epochs.trial_mut(1).copy_from_slice(&[3.0, 7.0]);
        let a = average_repetitions(&baseline_correct(&x, 1.0).unwrap(), None).unwrap();
        let b = baseline_correct(&average_repetitions(&x, None).unwrap(), 1.0).unwrap();
        for (u, v) in a.epochs.data().iter().zip(b.epochs.data()) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}
