//! Scientific analyses over a trained encoder: time/space/band ablation
//! sweeps, training-size and repetition sweeps, representational similarity,
//! Morlet time-frequency maps, and gradient-weighted electrode attribution.
//!
//! Everything here is deterministic given (parameters, data, grid, seed).
//! Sweeps share one evaluation path: average test repetitions, encode,
//! L2-normalize, rank against the concept templates.

mod gradcam;
mod rdm;
mod report;
mod sweeps;
mod tfr;

pub use gradcam::grad_cam_spatial;
pub use rdm::{rdm, rdm_from_features, Rdm, CATEGORIES};
pub use report::{write_rdm_csv, write_sweep_csv, write_sweep_manifest, write_tfr_csv,
    write_topography_csv};
pub use sweeps::{
    default_repetition_grid, default_size_fractions, sweep_bands, sweep_regions,
    sweep_test_repetitions, sweep_time, sweep_training_size, PointStore, RetrainContext,
    SizeAxis, SizeSpec, TimeSweepMode, DEFAULT_TIME_STEP_MS,
};
pub use tfr::{default_tfr_freqs, time_frequency, MORLET_CYCLES};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::contrastive::normalize_rows;
use crate::data_io::EEGEpochSet;
use crate::encoders::{forward_eval, EncoderParams};
use crate::numerics::Mat;
use crate::preprocess::{average_repetitions, repetition_groups};
use crate::zeroshot::{classify, topk_accuracy, SimilarityReport, TemplateBank};
use crate::{Error, Result};

/// How multi-repetition test trials collapse before ranking.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Repetitions averaged per stimulus; `None` averages all of them.
    pub avg_reps: Option<usize>,
    /// Average embeddings instead of signals. Off by default: averaging in
    /// signal space is the reference protocol, this flag exists to compare.
    pub feature_space_avg: bool,
}

/// A frozen encoder plus the template bank it is scored against.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub params: &'a EncoderParams<f32>,
    pub templates: &'a TemplateBank,
    pub opts: EvalOptions,
}

impl Evaluator<'_> {
    /// One normalized embedding per stimulus, with the true template index.
    ///
    /// The signal-space path averages repetitions first and encodes the mean
    /// trial; the feature-space path encodes every kept repetition and
    /// renormalizes the mean embedding. Both select repetitions identically.
    pub fn features(&self, eeg: &EEGEpochSet) -> Result<(Mat<f32>, Vec<usize>)> {
        let index = self.templates.index();
        let lookup = |concept: &str| -> Result<usize> {
            index.get(concept).copied().ok_or_else(|| {
                Error::Mapping(format!("concept '{concept}' has no template"))
            })
        };
        if !self.opts.feature_space_avg {
            let avg = average_repetitions(eeg, self.opts.avg_reps)?;
            let emb = forward_eval(self.params, &avg.epochs, 0)?;
            let (feats, _) = normalize_rows(&emb)?;
            let truth = avg
                .concept_ids
                .iter()
                .map(|c| lookup(c))
                .collect::<Result<Vec<usize>>>()?;
            return Ok((feats, truth));
        }
        let groups = repetition_groups(eeg, self.opts.avg_reps)?;
        let flat: Vec<usize> = groups.iter().flat_map(|g| g.trials.iter().copied()).collect();
        let subset = crate::data_io::subset_epochs(eeg, &flat)?;
        let emb = forward_eval(self.params, &subset.epochs, 0)?;
        let (per_trial, _) = normalize_rows(&emb)?;
        let d = per_trial.cols();
        let mut feats = Mat::zeros(groups.len(), d);
        let mut truth = Vec::with_capacity(groups.len());
        let mut acc = vec![0.0f64; d];
        let mut row = 0;
        for (g, group) in groups.iter().enumerate() {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for _ in &group.trials {
                for (a, &v) in acc.iter_mut().zip(per_trial.row(row)) {
                    *a += v as f64;
                }
                row += 1;
            }
            let inv = 1.0 / group.trials.len() as f64;
            let norm = acc.iter().map(|v| v * inv * (v * inv)).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Normalization(format!(
                    "averaged embeddings of stimulus '{}' have norm {norm}",
                    group.stimulus
                )));
            }
            let scale = inv / norm;
            for (dst, &v) in feats.row_mut(g).iter_mut().zip(&acc) {
                *dst = (v * scale) as f32;
            }
            truth.push(lookup(&group.concept)?);
        }
        Ok((feats, truth))
    }

    /// Full similarity report for the given ks.
    pub fn report(&self, eeg: &EEGEpochSet, ks: &[usize]) -> Result<SimilarityReport> {
        let (feats, truth) = self.features(eeg)?;
        classify(&feats, self.templates, ks, &truth)
    }

    /// (top-1, top-5) accuracy; top-5 degrades to top-n below 5 concepts.
    pub fn accuracy(&self, eeg: &EEGEpochSet) -> Result<(f64, f64)> {
        let n = self.templates.n_concepts();
        let k5 = 5.min(n);
        let ks: Vec<usize> = if k5 == 1 { vec![1] } else { vec![1, k5] };
        let report = self.report(eeg, &ks)?;
        let top1 = topk_accuracy(&report, 1)?;
        let top5 = topk_accuracy(&report, k5)?;
        Ok((top1, top5))
    }
}

/// Accuracy along one swept axis. The first point is always the unablated
/// baseline, so every sweep carries its own reference.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub axis: String,
    pub labels: Vec<String>,
    /// Numeric coordinate per point (ms, count, fraction); the point index
    /// for categorical axes.
    pub values: Vec<f64>,
    pub top1: Vec<f64>,
    pub top5: Vec<f64>,
    /// Provenance: grid, seeds, flags.
    pub meta: BTreeMap<String, String>,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.values.len() != n || self.top1.len() != n || self.top5.len() != n {
            return Err(Error::Dim(format!(
                "sweep '{}': {} labels, {} values, {} top1, {} top5",
                self.axis,
                n,
                self.values.len(),
                self.top1.len(),
                self.top5.len()
            )));
        }
        for (name, series) in [("top1", &self.top1), ("top5", &self.top5)] {
            for (i, &v) in series.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Numerical(format!(
                        "sweep '{}' point {i} ('{}'): {name} = {v} is not a fraction",
                        self.axis, self.labels[i]
                    )));
                }
            }
        }
        Ok(())
    }
}
