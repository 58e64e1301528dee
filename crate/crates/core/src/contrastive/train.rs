//! Contrastive training loop.
//!
//! Pairs are shuffled once per epoch from a single seeded stream, sliced
//! into batches (a trailing batch of fewer than two pairs is dropped:
//! batch norm and the contrastive loss both need company), and every batch
//! runs forward, symmetric InfoNCE, backward, and one Adam step. With a
//! validation split the full split is scored in eval mode after every epoch
//! and the best parameters are kept by strictly smaller validation loss.
//!
//! A non-finite loss or embedding does not kill the run: training stops,
//! the parameters roll back to the end of the last completed epoch, and
//! the outcome says why.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data_io::PairedDataset;
use crate::encoders::{
    backward_train, forward_eval, forward_train, init_params, EncoderParams, HyperParams,
};
use crate::error::{Error, Result};
use crate::numerics::{Mat, Tensor4};

use super::loss::{info_nce_full, normalize_rows, normalize_rows_backward};
use super::optim::Adam;

/// Knobs of one training run. `seed` drives both the parameter init and the
/// epoch shuffles, so (data, config) fully determines the result.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Upper bound applied to exp(log_t) after every step.
    pub max_exp_t: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1000,
            lr: super::optim::DEFAULT_LR,
            seed: 0,
            max_exp_t: 100.0,
        }
    }
}

/// Per-epoch record emitted through the progress callback.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean batch loss over the epoch.
    pub train_loss: f64,
    /// Full-split eval-mode loss, when a validation split is present.
    pub val_loss: Option<f64>,
    pub exp_t: f64,
    pub seconds: f64,
}

/// Lowest-validation-loss parameters seen so far.
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: EncoderParams<f32>,
}

pub struct TrainOutcome {
    /// Parameters after the last completed epoch (or the rollback point on
    /// an abort).
    pub params: EncoderParams<f32>,
    /// Best validation snapshot; `None` without a validation split.
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochStats>,
    /// Why training stopped early, if it did.
    pub aborted: Option<String>,
}

/// Gathers the trials and L2-normalized feature rows named by `pairs`.
fn gather_pairs(
    data: &PairedDataset,
    order: &[usize],
    img_norm: &Mat<f32>,
) -> (Tensor4<f32>, Mat<f32>) {
    let [_, _, c, t] = data.eeg.epochs.dims();
    let d = img_norm.cols();
    let mut x = Tensor4::zeros([order.len(), 1, c, t]);
    let mut img = Mat::zeros(order.len(), d);
    for (dst, &idx) in order.iter().enumerate() {
        let (trial, _) = data.pairs[idx];
        x.trial_mut(dst).copy_from_slice(data.eeg.epochs.trial(trial));
        img.row_mut(dst).copy_from_slice(img_norm.row(idx));
    }
    (x, img)
}

/// Normalized feature rows aligned with `pairs` order.
fn paired_features(data: &PairedDataset) -> Result<Mat<f32>> {
    let d = data.bank.dim();
    let mut rows = Mat::zeros(data.n_pairs(), d);
    for (dst, &(_, row)) in data.pairs.iter().enumerate() {
        rows.row_mut(dst).copy_from_slice(data.bank.features.row(row));
    }
    let (normed, _) = normalize_rows(&rows)?;
    Ok(normed)
}

fn check_compatible(data: &PairedDataset, hyper: &HyperParams, what: &str) -> Result<()> {
    let [_, _, c, t] = data.eeg.epochs.dims();
    if c != hyper.c || t != hyper.t {
        return Err(Error::Dim(format!(
            "{what} split has {c} electrodes x {t} samples, encoder expects {} x {}",
            hyper.c, hyper.t
        )));
    }
    if data.bank.dim() != hyper.d {
        return Err(Error::Dim(format!(
            "{what} split features are {}-dimensional, encoder projects to {}",
            data.bank.dim(),
            hyper.d
        )));
    }
    Ok(())
}

/// Scores a split in eval mode: full-split symmetric InfoNCE at the current
/// temperature.
pub fn eval_loss(
    params: &EncoderParams<f32>,
    x: &Tensor4<f32>,
    img_norm: &Mat<f32>,
) -> Result<f64> {
    let emb = forward_eval(params, x, 0)?;
    let (e_norm, _) = normalize_rows(&emb)?;
    let out = info_nce_full(&e_norm, img_norm, params.log_t)?;
    Ok(out.loss as f64)
}

/// Trains a fresh encoder on `data`. See the module docs for the loop
/// structure. The callback fires after every epoch with its stats row.
pub fn train(
    data: &PairedDataset,
    val: Option<&PairedDataset>,
    hyper: HyperParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    if cfg.batch_size < 2 {
        return Err(Error::Argument(format!(
            "batch size must be at least 2, got {}",
            cfg.batch_size
        )));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::Argument(format!("learning rate {} out of range", cfg.lr)));
    }
    if !(cfg.max_exp_t.is_finite() && cfg.max_exp_t > 0.0) {
        return Err(Error::Argument(format!(
            "temperature cap {} out of range",
            cfg.max_exp_t
        )));
    }
    let n = data.n_pairs();
    if n < 2 {
        return Err(Error::DegenerateBatch(format!(
            "training needs at least 2 paired trials, got {n}"
        )));
    }
    check_compatible(data, &hyper, "train")?;
    let val = val.filter(|v| v.n_pairs() > 0);
    if let Some(v) = val {
        check_compatible(v, &hyper, "validation")?;
    }

    let img_norm = paired_features(data)?;
    let val_parts = match val {
        Some(v) => {
            let all: Vec<usize> = (0..v.n_pairs()).collect();
            let feats = paired_features(v)?;
            Some(gather_pairs(v, &all, &feats))
        }
        None => None,
    };

    let mut params = init_params(hyper, cfg.seed)?.convert::<f32>();
    let mut adam = Adam::<f32>::new(cfg.lr);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let log_t_cap = (cfg.max_exp_t.ln()) as f32;

    let mut last_good = params.clone();
    let mut best: Option<BestSnapshot> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut aborted = None;
    let mut order: Vec<usize> = (0..n).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut weight = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let (x, img) = gather_pairs(data, batch, &img_norm);
            let step = (|| -> Result<f64> {
                let (emb, cache) = forward_train(x, &mut params)?;
                let (e_norm, norms) = normalize_rows(&emb)?;
                let nce = info_nce_full(&e_norm, &img, params.log_t)?;
                if !nce.loss.is_finite() {
                    return Err(Error::NonFinite(format!("batch loss is {}", nce.loss)));
                }
                let d_emb = normalize_rows_backward(&e_norm, &norms, &nce.d_e)?;
                let (_, mut grads) = backward_train(&params, &cache, &d_emb, false)?;
                grads.log_t = nce.d_log_t;
                adam.step(&mut params, &grads);
                params.log_t = params.log_t.min(log_t_cap);
                Ok(nce.loss as f64)
            })();
            match step {
                Ok(loss) => {
                    loss_sum += loss * batch.len() as f64;
                    weight += batch.len();
                }
                Err(Error::NonFinite(msg)) | Err(Error::Normalization(msg)) => {
                    params = last_good;
                    aborted = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / weight as f64;

        let val_loss = match &val_parts {
            Some((vx, vimg)) => match eval_loss(&params, vx, vimg) {
                Ok(l) if l.is_finite() => Some(l),
                Ok(l) => {
                    params = last_good;
                    aborted = Some(format!("epoch {epoch}: validation loss is {l}"));
                    break 'epochs;
                }
                Err(Error::NonFinite(msg)) | Err(Error::Normalization(msg)) => {
                    params = last_good;
                    aborted = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            },
            None => None,
        };

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            exp_t: params.exp_t() as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);

        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|b| vl < b.val_loss) {
                best = Some(BestSnapshot {
                    epoch,
                    val_loss: vl,
                    params: params.clone(),
                });
            }
        }
        last_good = params.clone();
    }

    Ok(TrainOutcome {
        params,
        best,
        history,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{pair_by_stimulus, EEGEpochSet, FeatureBank};
    use crate::encoders::ModuleKind;
    use rand::{Rng, SeedableRng};

    fn small_hyper() -> HyperParams {
        HyperParams {
            k: 3,
            m1: 5,
            m2: 7,
            s2: 3,
            ..HyperParams::new(4, 30, 6).with_module(ModuleKind::None)
        }
    }

    /// n trials over n stimuli, EEG loosely driven by the feature rows.
    fn toy(n: usize, seed: u64) -> PairedDataset {
        let (c, t, d) = (4, 30, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut feats = Mat::zeros(n, d);
        for v in feats.data_mut() {
            *v = rng.random::<f32>() - 0.5;
        }
        let mut epochs = Tensor4::zeros([n, 1, c, t]);
        for i in 0..n {
            let f = feats.row(i).to_vec();
            for ci in 0..c {
                for ti in 0..t {
                    let drive = f[ti % f.len()];
                    let noise = rng.random::<f32>() - 0.5;
                    epochs.set(i, 0, ci, ti, drive + 0.1 * noise);
                }
            }
        }
        let ids: Vec<String> = (0..n).map(|i| format!("img_{i:03}")).collect();
        let eeg = EEGEpochSet {
            epochs,
            sample_rate: 100.0,
            channel_names: (0..c).map(|i| format!("C{i}")).collect(),
            stimulus_ids: ids.clone(),
            concept_ids: (0..n).map(|i| format!("concept_{:02}", i / 2)).collect(),
            repetition_index: vec![0; n],
        };
        let bank = FeatureBank {
            features: feats,
            image_ids: ids,
            concept_ids: (0..n).map(|i| format!("concept_{:02}", i / 2)).collect(),
            encoder_tag: "toy".into(),
        };
        pair_by_stimulus(eeg, bank).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 1e-3,
            seed: 7,
            max_exp_t: 100.0,
        }
    }

    #[test]
    fn loss_history_is_bit_reproducible() {
        let data = toy(10, 1);
        let cfg = quick_cfg();
        let a = train(&data, None, small_hyper(), &cfg, |_| {}).unwrap();
        let b = train(&data, None, small_hyper(), &cfg, |_| {}).unwrap();
        assert_eq!(a.history.len(), 3);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.exp_t.to_bits(), y.exp_t.to_bits());
        }
        assert_eq!(a.params.log_t, b.params.log_t);
        assert_eq!(a.params.proj_w.data(), b.params.proj_w.data());
    }

    #[test]
    fn validation_tracks_a_best_snapshot() {
        let data = toy(12, 2);
        let val = toy(6, 3);
        let cfg = TrainConfig {
            epochs: 5,
            ..quick_cfg()
        };
        let mut seen = 0;
        let out = train(&data, Some(&val), small_hyper(), &cfg, |s| {
            assert!(s.val_loss.is_some());
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, 5);
        let best = out.best.expect("validation split provides a best snapshot");
        let min = out
            .history
            .iter()
            .filter_map(|s| s.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.val_loss, min);
        // strict-less keeps the first epoch attaining the minimum
        let first = out
            .history
            .iter()
            .position(|s| s.val_loss == Some(min))
            .unwrap();
        assert_eq!(best.epoch, first);
    }

    #[test]
    fn non_finite_input_aborts_with_rollback() {
        let mut data = toy(8, 4);
        let trial = data.eeg.epochs.trial_mut(3);
        trial[5] = f32::NAN;
        let out = train(&data, None, small_hyper(), &quick_cfg(), |_| {}).unwrap();
        assert!(out.aborted.is_some(), "NaN input must abort");
        assert!(out.params.log_t.is_finite());
        for v in out.params.proj_w.data() {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let data = toy(8, 5);
        let mut cfg = quick_cfg();
        cfg.batch_size = 1;
        assert!(matches!(
            train(&data, None, small_hyper(), &cfg, |_| {}),
            Err(Error::Argument(_))
        ));
        let mut wrong = small_hyper();
        wrong.d = 9;
        assert!(matches!(
            train(&data, None, wrong, &quick_cfg(), |_| {}),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn temperature_stays_under_the_cap() {
        let data = toy(10, 6);
        let cfg = TrainConfig {
            epochs: 4,
            max_exp_t: 15.0,
            ..quick_cfg()
        };
        let out = train(&data, None, small_hyper(), &cfg, |_| {}).unwrap();
        assert!(out.params.exp_t() <= 15.0 + 1e-4);
        for s in &out.history {
            assert!(s.exp_t <= 15.0 + 1e-4);
        }
    }
}
