//! Central-finite-difference gradient checking.
//!
//! A check problem packs everything differentiable (inputs and parameters)
//! into one flat f64 vector split into named blocks, exposes the forward as a
//! scalar objective, and exposes the hand-derived backward as a full gradient
//! of that objective. The checker perturbs sampled coordinates one at a time
//! and compares.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CheckConfig {
    /// Relative-error threshold for a point to pass.
    pub tolerance: f64,
    /// Minimum sampled coordinates per block (capped at the block length;
    /// callers wanting more coverage run several problem instances).
    pub min_points: usize,
    /// Base finite-difference step; scaled by max(1, |theta_i|) per coordinate.
    pub step: f64,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            tolerance: 1e-4,
            min_points: 10,
            step: 1e-5,
            seed: 0x5EED,
        }
    }
}

/// Worst observed error for one named block of coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Outcome of checking one layer (one problem instance, or several merged).
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub layer: String,
    pub tensors: Vec<TensorReport>,
    pub max_rel_err: f64,
    pub passed: bool,
    pub tolerance: f64,
}

impl CheckReport {
    /// Folds another instance's results into per-block maxima.
    pub fn merge(&mut self, other: &CheckReport) {
        for t in &other.tensors {
            match self.tensors.iter_mut().find(|m| m.name == t.name) {
                Some(m) => {
                    m.points += t.points;
                    if t.max_rel_err > m.max_rel_err {
                        m.max_rel_err = t.max_rel_err;
                        m.worst_coord = t.worst_coord;
                    }
                }
                None => self.tensors.push(t.clone()),
            }
        }
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.passed = self.passed && other.passed;
    }
}

/// Relative error with an absolute floor so near-zero gradients are compared
/// absolutely (to 1e-9 at the default tolerance) instead of amplifying noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Checks `grad` against central differences of `eval` at `theta0`.
///
/// `blocks` names consecutive slices of the flat vector: [(name, len), ...].
pub fn check_gradients(
    layer: &str,
    blocks: &[(String, usize)],
    theta0: &[f64],
    eval: impl Fn(&[f64]) -> Result<f64>,
    grad: impl Fn(&[f64]) -> Result<Vec<f64>>,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let total: usize = blocks.iter().map(|(_, l)| l).sum();
    if total != theta0.len() {
        return Err(Error::Dim(format!(
            "gradient check {layer}: blocks cover {total} coords, theta has {}",
            theta0.len()
        )));
    }
    let analytic = grad(theta0)?;
    if analytic.len() != theta0.len() {
        return Err(Error::Dim(format!(
            "gradient check {layer}: gradient length {} != theta length {}",
            analytic.len(),
            theta0.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|v| !v.is_finite()) {
        let (name, off) = block_of(blocks, i);
        return Err(Error::NonFinite(format!(
            "gradient check {layer}: analytic gradient is not finite at {name}[{off}]"
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut theta = theta0.to_vec();
    let mut tensors = Vec::new();
    let mut base = 0usize;
    for (name, len) in blocks {
        let mut idx: Vec<usize> = (0..*len).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.min_points.min(*len));
        let mut worst = 0.0f64;
        let mut worst_coord = 0usize;
        for &off in &idx {
            let i = base + off;
            let h = cfg.step * theta0[i].abs().max(1.0);
            theta[i] = theta0[i] + h;
            let fp = eval(&theta)?;
            theta[i] = theta0[i] - h;
            let fm = eval(&theta)?;
            theta[i] = theta0[i];
            let numeric = (fp - fm) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check {layer}: finite difference is not finite at {name}[{off}]"
                )));
            }
            let e = rel_err(analytic[i], numeric);
            if e > worst {
                worst = e;
                worst_coord = off;
            }
        }
        tensors.push(TensorReport {
            name: name.clone(),
            points: idx.len(),
            max_rel_err: worst,
            worst_coord,
        });
        base += len;
    }

    let max_rel_err = tensors.iter().fold(0.0f64, |m, t| m.max(t.max_rel_err));
    Ok(CheckReport {
        layer: layer.to_string(),
        max_rel_err,
        passed: max_rel_err < cfg.tolerance,
        tolerance: cfg.tolerance,
        tensors,
    })
}

fn block_of(blocks: &[(String, usize)], i: usize) -> (String, usize) {
    let mut base = 0;
    for (name, len) in blocks {
        if i < base + len {
            return (name.clone(), i - base);
        }
        base += len;
    }
    ("?".into(), i)
}
