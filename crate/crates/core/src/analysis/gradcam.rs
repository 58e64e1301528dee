//! Gradient-weighted electrode attribution.
//!
//! Answers "which channels carry the alignment signal": gradients of the
//! embedding/feature similarity are taken at the attention-module output and
//! folded with the activations themselves, keeping only positive evidence.

use crate::contrastive::{normalize_rows, normalize_rows_backward};
use crate::encoders::{backward_eval, forward_eval_trace, EncoderParams, ModuleKind};
use crate::numerics::{Mat, Tensor4};
use crate::{Error, Result};

/// Per-electrode attribution in [0, 1], max-normalized.
///
/// The target is the summed cosine similarity between each trial's
/// normalized embedding and its matched normalized image feature row.
/// Per element, evidence is relu(gradient * activation) at the module
/// output, averaged over trials and time.
pub fn grad_cam_spatial(
    params: &EncoderParams<f32>,
    x: &Tensor4<f32>,
    img: &Mat<f32>,
) -> Result<Vec<f64>> {
    if params.hyper.module == ModuleKind::None {
        return Err(Error::Unsupported(
            "electrode attribution differentiates the attention module output; \
             this encoder has no module"
                .into(),
        ));
    }
    let [n, _, c, t] = x.dims();
    if img.rows() != n || img.cols() != params.hyper.d {
        return Err(Error::Dim(format!(
            "{} x {} image features for {n} trials of embedding dim {}",
            img.rows(),
            img.cols(),
            params.hyper.d
        )));
    }
    let (emb, trace) = forward_eval_trace(params, x)?;
    let (e_norm, e_norms) = normalize_rows(&emb)?;
    let (i_norm, _) = normalize_rows(img)?;
    // d/d_emb of sum_i cos(e_i, f_i): the upstream of the normalization is
    // the normalized feature row itself.
    let d_emb = normalize_rows_backward(&e_norm, &e_norms, &i_norm)?;
    let d_xm = backward_eval(params, &trace, &d_emb)?;

    let mut weights = vec![0.0f64; c];
    let inv = 1.0 / (n * t) as f64;
    for trial in 0..n {
        for (ch, w) in weights.iter_mut().enumerate() {
            let grad = d_xm.row(trial, 0, ch);
            let act = trace.xm.row(trial, 0, ch);
            let mut acc = 0.0;
            for (g, a) in grad.iter().zip(act) {
                let p = (*g as f64) * (*a as f64);
                if p > 0.0 {
                    acc += p;
                }
            }
            *w += acc * inv;
        }
    }
    let max = weights.iter().cloned().fold(0.0, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite(
            "electrode attribution overflowed; check the inputs".into(),
        ));
    }
    if max > 0.0 {
        for w in &mut weights {
            *w /= max;
        }
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::fixture;
    use crate::data_io::pair_by_stimulus;

    fn matched_features(fx: &crate::analysis::tests::Fixture) -> Mat<f32> {
        let ds = pair_by_stimulus(fx.data.train.clone(), fx.data.train_bank.clone()).unwrap();
        let mut img = Mat::zeros(ds.eeg.n_trials(), fx.data.train_bank.features.cols());
        for &(trial, row) in &ds.pairs {
            img.row_mut(trial)
                .copy_from_slice(ds.bank.features.row(row));
        }
        img
    }

    #[test]
    fn plain_encoder_has_nothing_to_attribute() {
        let fx = fixture(ModuleKind::None, 31);
        let img = matched_features(&fx);
        let err = grad_cam_spatial(&fx.params, &fx.data.train.epochs, &img).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)), "{err}");
    }

    #[test]
    fn attribution_is_normalized_and_deterministic() {
        for module in [ModuleKind::Sa, ModuleKind::Ga] {
            let fx = fixture(module, 31);
            let img = matched_features(&fx);
            let w = grad_cam_spatial(&fx.params, &fx.data.train.epochs, &img).unwrap();
            assert_eq!(w.len(), 4);
            assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)), "{w:?}");
            let max = w.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, 1.0, "the hottest electrode is exactly 1");
            let again = grad_cam_spatial(&fx.params, &fx.data.train.epochs, &img).unwrap();
            assert_eq!(w, again);
        }
    }

    #[test]
    fn feature_shape_must_match_the_batch() {
        let fx = fixture(ModuleKind::Sa, 31);
        let img = Mat::zeros(3, fx.params.hyper.d);
        assert!(matches!(
            grad_cam_spatial(&fx.params, &fx.data.train.epochs, &img),
            Err(Error::Dim(_))
        ));
    }
}
