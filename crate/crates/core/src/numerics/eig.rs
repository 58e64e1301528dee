//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Deterministic and dependency-free; intended for small matrices (channel
//! covariances, C <= 64-ish), where Jacobi converges in a handful of sweeps.

use crate::error::{Error, Result};
use crate::numerics::tensor::Mat;

/// Decomposes symmetric `a` into eigenvalues and an orthonormal matrix whose
/// columns are the matching eigenvectors: a = V diag(vals) V^T.
pub fn sym_eig(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dim(format!(
            "sym_eig wants a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.at(i, j) - a.at(j, i)).abs() > 1e-9 * scale.max(1.0) {
                return Err(Error::Argument(format!(
                    "sym_eig input is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut m = a.clone();
    // Symmetrize exactly so rotations keep the matrix symmetric bit-wise.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m.at(i, j) + m.at(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }

    let off = |m: &Mat<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m.at(i, j) * m.at(i, j);
            }
        }
        s
    };
    let tol = 1e-24 * (scale * scale).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off(&m) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root of t^2 + 2 t theta - 1 = 0.
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m.at(i, p);
                    let miq = m.at(i, q);
                    m.set(i, p, c * mip - s * miq);
                    m.set(i, q, s * mip + c * miq);
                }
                for i in 0..n {
                    let mpi = m.at(p, i);
                    let mqi = m.at(q, i);
                    m.set(p, i, c * mpi - s * mqi);
                    m.set(q, i, s * mpi + c * mqi);
                }
                for i in 0..n {
                    let vip = v.at(i, p);
                    let viq = v.at(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }

    let vals: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("sym_eig produced non-finite values".into()));
    }
    Ok((vals, v))
}
