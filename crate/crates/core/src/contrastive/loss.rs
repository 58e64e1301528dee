//! Symmetric InfoNCE over a batch of paired embeddings.
//!
//! The batch's EEG embeddings and image features are L2-normalized, their
//! scaled similarity matrix is treated as logits, and the loss averages the
//! cross-entropy of matching each trial to its image (rows) and each image
//! to its trial (columns). Only the EEG side and the temperature receive
//! gradients; the image features come from a frozen encoder.

use crate::error::{Error, Result};
use crate::numerics::layers::softmax_rows;
use crate::numerics::{gemm, Mat, Scalar};

/// L2-normalizes every row. Returns the normalized matrix and the original
/// row norms (the backward pass needs them).
pub fn normalize_rows<S: Scalar>(x: &Mat<S>) -> Result<(Mat<S>, Vec<S>)> {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..y.rows() {
        let row = y.row_mut(r);
        let norm = row.iter().map(|v| *v * *v).sum::<S>().sqrt();
        if !(norm.is_finite() && norm > S::zero()) {
            return Err(Error::Normalization(format!(
                "row {r} has norm {norm}, cannot normalize"
            )));
        }
        let inv = S::one() / norm;
        for v in row.iter_mut() {
            *v *= inv;
        }
        norms.push(norm);
    }
    Ok((y, norms))
}

/// Backward of [`normalize_rows`]: projects `dy` onto the tangent of the
/// unit sphere at each row and rescales by the original norm.
pub fn normalize_rows_backward<S: Scalar>(
    y: &Mat<S>,
    norms: &[S],
    dy: &Mat<S>,
) -> Result<Mat<S>> {
    if y.rows() != dy.rows() || y.cols() != dy.cols() || norms.len() != y.rows() {
        return Err(Error::Dim(format!(
            "normalize backward: y {}x{}, dy {}x{}, {} norms",
            y.rows(),
            y.cols(),
            dy.rows(),
            dy.cols(),
            norms.len()
        )));
    }
    let mut dx = dy.clone();
    for (r, &norm) in norms.iter().enumerate() {
        let yr = y.row(r);
        let dr = dx.row_mut(r);
        let along: S = yr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
        let inv = S::one() / norm;
        for (o, &yv) in dr.iter_mut().zip(yr) {
            *o = (*o - yv * along) * inv;
        }
    }
    Ok(dx)
}

fn logsumexp<S: Scalar>(values: impl Iterator<Item = S> + Clone) -> f64 {
    let max = values
        .clone()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: f64 = values.map(|v| (v - max).as_f64().exp()).sum();
    max.as_f64() + sum.ln()
}

/// Loss and logit gradient of the symmetric InfoNCE objective for a square
/// logit matrix whose diagonal holds the matching pairs.
///
/// loss = (sum_i CE(row_i, i) + sum_j CE(col_j, j)) / 2b and
/// dlogits = (row_softmax + col_softmax - 2 I) / 2b. With a single pair the
/// loss is exactly zero: there is nothing to contrast against.
pub fn info_nce<S: Scalar>(logits: &Mat<S>) -> Result<(S, Mat<S>)> {
    let b = logits.rows();
    if b == 0 || logits.cols() != b {
        return Err(Error::Dim(format!(
            "contrastive logits must be square and non-empty, got {}x{}",
            logits.rows(),
            logits.cols()
        )));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contrastive logits are not finite".into()));
    }

    let mut loss = 0.0f64;
    for i in 0..b {
        let row = logits.row(i);
        loss += logsumexp(row.iter().copied()) - row[i].as_f64();
        loss += logsumexp((0..b).map(|r| logits.at(r, i))) - row[i].as_f64();
    }
    loss /= 2.0 * b as f64;

    let p = softmax_rows(logits);
    let mut lt = Mat::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            lt.set(j, i, logits.at(i, j));
        }
    }
    let qt = softmax_rows(&lt);
    let scale = S::from_f64(1.0 / (2.0 * b as f64));
    let mut d = Mat::zeros(b, b);
    for i in 0..b {
        let pr = p.row(i);
        let dr = d.row_mut(i);
        for j in 0..b {
            let mut g = pr[j] + qt.at(j, i);
            if i == j {
                g -= S::from_f64(2.0);
            }
            dr[j] = g * scale;
        }
    }
    Ok((S::from_f64(loss), d))
}

/// Everything the training step needs from the loss: its value, the gradient
/// at the normalized EEG embeddings, and the gradient at the log
/// temperature.
pub struct NceOutput<S> {
    pub loss: S,
    pub d_e: Mat<S>,
    pub d_log_t: S,
}

/// Symmetric InfoNCE on normalized embeddings: logits = exp(log_t) e imgᵀ.
/// `e` and `img` must hold unit rows, matched pairs at equal indices.
pub fn info_nce_full<S: Scalar>(e: &Mat<S>, img: &Mat<S>, log_t: S) -> Result<NceOutput<S>> {
    if e.rows() != img.rows() || e.cols() != img.cols() {
        return Err(Error::Dim(format!(
            "contrastive batch: embeddings {}x{} vs image features {}x{}",
            e.rows(),
            e.cols(),
            img.rows(),
            img.cols()
        )));
    }
    if !log_t.is_finite() {
        return Err(Error::NonFinite(format!("log temperature is {log_t}")));
    }
    let b = e.rows();
    let d = e.cols();
    let exp_t = log_t.exp();
    let mut logits = Mat::zeros(b, b);
    gemm(
        b,
        d,
        b,
        exp_t,
        e.data(),
        false,
        img.data(),
        true,
        S::zero(),
        logits.data_mut(),
    );
    let (loss, dlogits) = info_nce(&logits)?;

    // logits scale linearly with exp(log_t), so d log_t = sum dlogits * logits
    let d_log_t: f64 = dlogits
        .data()
        .iter()
        .zip(logits.data())
        .map(|(g, l)| g.as_f64() * l.as_f64())
        .sum();

    let mut d_e = Mat::zeros(b, d);
    gemm(
        b,
        b,
        d,
        exp_t,
        dlogits.data(),
        false,
        img.data(),
        false,
        S::zero(),
        d_e.data_mut(),
    );
    Ok(NceOutput {
        loss,
        d_e,
        d_log_t: S::from_f64(d_log_t),
    })
}
