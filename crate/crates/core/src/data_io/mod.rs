//! Dataset containers, on-disk formats, stimulus pairing and the synthetic
//! planted-signal oracle.
//!
//! All containers are immutable after construction and safe to share across
//! threads. Loaders validate invariants on the way in so downstream code can
//! assume well-formed data.

pub(crate) mod format;
mod synth;

pub use format::{
    load_epochs, load_feature_bank, read_raw_matrix, save_epochs, save_feature_bank,
    write_raw_matrix,
};
pub use synth::{synth_generate, GroundTruth, SynthData, SynthSpec};

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::numerics::{Mat, Tensor4};
use crate::{Error, Result};

/// Validation trials held out from the training split by default.
pub const DEFAULT_N_VAL: usize = 740;

/// Epoched EEG trials plus per-trial stimulus metadata.
///
/// `epochs` is stored as (n_trials, 1, electrodes, samples); the singleton
/// map axis keeps the layout identical to what the encoder consumes.
#[derive(Debug, Clone)]
pub struct EEGEpochSet {
    pub epochs: Tensor4<f32>,
    /// Sampling rate in Hz.
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
    pub stimulus_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    pub repetition_index: Vec<u32>,
}

impl EEGEpochSet {
    pub fn n_trials(&self) -> usize {
        self.epochs.dims()[0]
    }

    pub fn n_electrodes(&self) -> usize {
        self.epochs.dims()[2]
    }

    pub fn n_samples(&self) -> usize {
        self.epochs.dims()[3]
    }

    /// Checks the structural invariants that every epoch set must satisfy.
    pub fn validate(&self) -> Result<()> {
        let [n, m, c, _t] = self.epochs.dims();
        if m != 1 {
            return Err(Error::Format(format!(
                "epoch tensor must have a single map axis, got {m}"
            )));
        }
        if self.channel_names.len() != c {
            return Err(Error::Format(format!(
                "{} channel names for {} electrodes",
                self.channel_names.len(),
                c
            )));
        }
        if self.stimulus_ids.len() != n || self.concept_ids.len() != n {
            return Err(Error::Format(format!(
                "{} stimulus ids / {} concept ids for {} trials",
                self.stimulus_ids.len(),
                self.concept_ids.len(),
                n
            )));
        }
        if self.repetition_index.len() != n {
            return Err(Error::Format(format!(
                "{} repetition indices for {} trials",
                self.repetition_index.len(),
                n
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Format(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        let mut seen: HashSet<(&str, u32)> = HashSet::with_capacity(n);
        for i in 0..n {
            let key = (self.stimulus_ids[i].as_str(), self.repetition_index[i]);
            if !seen.insert(key) {
                return Err(Error::Format(format!(
                    "duplicate (stimulus, repetition) pair ('{}', {})",
                    key.0, key.1
                )));
            }
        }
        Ok(())
    }
}

/// Precomputed image features with identifier metadata.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    /// (n_images, D) feature rows.
    pub features: Mat<f32>,
    pub image_ids: Vec<String>,
    pub concept_ids: Vec<String>,
    /// Free-form provenance string describing the image encoder.
    pub encoder_tag: String,
}

impl FeatureBank {
    pub fn n_images(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.features.cols() == 0 {
            return Err(Error::Format("feature dimension must be at least 1".into()));
        }
        if self.image_ids.len() != n || self.concept_ids.len() != n {
            return Err(Error::Format(format!(
                "{} image ids / {} concept ids for {} feature rows",
                self.image_ids.len(),
                self.concept_ids.len(),
                n
            )));
        }
        let mut seen: HashSet<&str> = HashSet::with_capacity(n);
        for id in &self.image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("duplicate image id '{id}'")));
            }
        }
        for r in 0..n {
            if self.features.row(r).iter().all(|v| *v == 0.0) {
                return Err(Error::Integrity(format!(
                    "feature row {r} ('{}') is all zero",
                    self.image_ids[r]
                )));
            }
        }
        Ok(())
    }

    /// Expected O(1) image-id lookup table.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// EEG trials joined with the feature rows of their stimulus images.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub eeg: EEGEpochSet,
    pub bank: FeatureBank,
    /// (trial index, feature row index) for every trial, in trial order.
    pub pairs: Vec<(usize, usize)>,
}

impl PairedDataset {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// Joins every trial with the feature row of its stimulus image.
pub fn pair_by_stimulus(eeg: EEGEpochSet, bank: FeatureBank) -> Result<PairedDataset> {
    eeg.validate()?;
    bank.validate()?;
    let index = bank.index();
    let mut pairs = Vec::with_capacity(eeg.n_trials());
    for (trial, sid) in eeg.stimulus_ids.iter().enumerate() {
        let row = index.get(sid.as_str()).copied().ok_or_else(|| {
            Error::Integrity(format!("stimulus '{sid}' has no row in the feature bank"))
        })?;
        pairs.push((trial, row));
    }
    Ok(PairedDataset { eeg, bank, pairs })
}

/// Copies the selected trials (with their metadata) into a new epoch set.
pub fn subset_epochs(set: &EEGEpochSet, trials: &[usize]) -> Result<EEGEpochSet> {
    let [n, _, c, t] = set.epochs.dims();
    let mut epochs = Tensor4::zeros([trials.len(), 1, c, t]);
    let mut stimulus_ids = Vec::with_capacity(trials.len());
    let mut concept_ids = Vec::with_capacity(trials.len());
    let mut repetition_index = Vec::with_capacity(trials.len());
    for (dst, &src) in trials.iter().enumerate() {
        if src >= n {
            return Err(Error::Argument(format!(
                "trial index {src} out of range for {n} trials"
            )));
        }
        epochs.trial_mut(dst).copy_from_slice(set.epochs.trial(src));
        stimulus_ids.push(set.stimulus_ids[src].clone());
        concept_ids.push(set.concept_ids[src].clone());
        repetition_index.push(set.repetition_index[src]);
    }
    Ok(EEGEpochSet {
        epochs,
        sample_rate: set.sample_rate,
        channel_names: set.channel_names.clone(),
        stimulus_ids,
        concept_ids,
        repetition_index,
    })
}

/// Splits a paired dataset into disjoint train/validation parts.
///
/// Membership is a seeded shuffle, so a fixed seed always produces the same
/// split; trial order within each part stays ascending.
pub fn split_train_val(
    ds: &PairedDataset,
    n_val: usize,
    seed: u64,
) -> Result<(PairedDataset, PairedDataset)> {
    let n = ds.eeg.n_trials();
    if n_val >= n {
        return Err(Error::Argument(format!(
            "cannot hold out {n_val} of {n} trials for validation"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut train: Vec<usize> = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    let train_ds = pair_by_stimulus(subset_epochs(&ds.eeg, &train)?, ds.bank.clone())?;
    let val_ds = pair_by_stimulus(subset_epochs(&ds.eeg, &val)?, ds.bank.clone())?;
    Ok((train_ds, val_ds))
}
