//! Electrode-axis attention modules.
//!
//! Both modules treat the C electrode rows of one trial as tokens and share
//! their (T,T) projection maps across rows. Every reduction that mixes rows
//! is computed in an order that depends only on the values involved, never
//! on row indices, so permuting the electrodes permutes the output
//! bit-exactly. That is also why the projections below use plain sequential
//! dot products instead of the blocked GEMM: the accumulation order is then
//! pinned by construction.

// Index-driven loops below keep that order visible; do not iterator-ize them.
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};
use crate::numerics::layers::{softmax_rows_backward, softmax_rows_canonical};
use crate::numerics::{Mat, Scalar, Tensor4};

use super::{GaParams, SaParams, SpatialModule};

/// Negative-side slope of the attention logit nonlinearity.
pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += alpha * *v;
    }
}

/// out[i][j] = dot(a.row(i), bt.row(j)); `bt` holds the right operand
/// transposed so both reads are contiguous. Each output element depends only
/// on the two row contents, making row permutations commute bit-exactly.
fn matmul_rows_seq<S: Scalar>(a: &Mat<S>, bt: &Mat<S>) -> Mat<S> {
    debug_assert_eq!(a.cols(), bt.cols());
    let mut out = Mat::zeros(a.rows(), bt.rows());
    for i in 0..a.rows() {
        let ar = a.row(i);
        let or = out.row_mut(i);
        for (j, o) in or.iter_mut().enumerate() {
            *o = dot(ar, bt.row(j));
        }
    }
    out
}

/// out.row(i) = sum_j coef[i][j] * payload.row(j), with the j-terms of each
/// row accumulated in an order sorted by (coefficient, payload row): a pure
/// function of values, so electrode permutations cannot reorder the sum.
/// Ties across bit-identical (coefficient, row) pairs are harmless because
/// swapping identical terms cannot change the result.
fn sorted_mix<S: Scalar>(coef: &Mat<S>, payload: &Mat<S>) -> Mat<S> {
    let c = coef.rows();
    debug_assert_eq!(coef.cols(), c);
    debug_assert_eq!(payload.rows(), c);
    let mut out = Mat::zeros(c, payload.cols());
    let mut order: Vec<usize> = Vec::with_capacity(c);
    for i in 0..c {
        let cr = coef.row(i);
        order.clear();
        order.extend(0..c);
        order.sort_unstable_by(|&x, &y| {
            cr[x].order(&cr[y]).then_with(|| {
                for (px, py) in payload.row(x).iter().zip(payload.row(y)) {
                    let ord = px.order(py);
                    if ord != std::cmp::Ordering::Equal {
                        return ord;
                    }
                }
                std::cmp::Ordering::Equal
            })
        });
        let or = out.row_mut(i);
        for &j in &order {
            axpy(cr[j], payload.row(j), or);
        }
    }
    out
}

/// Forward state the self-attention backward pass consumes.
#[derive(Clone, Debug)]
pub struct SaCache<S> {
    pub q: Mat<S>,
    pub k: Mat<S>,
    pub v: Mat<S>,
    pub attn: Mat<S>,
}

fn check_rows<S: Scalar>(x: &Mat<S>, t: usize, what: &str) -> Result<()> {
    if x.cols() != t {
        return Err(Error::Dim(format!(
            "{what}: input has {} samples per electrode, maps expect {t}",
            x.cols()
        )));
    }
    Ok(())
}

/// Self-attention over electrodes with a residual connection:
/// out = x + softmax((x Wq^T)(x Wk^T)^T / sqrt(T)) (x Wv^T).
pub fn sa_forward<S: Scalar>(x: &Mat<S>, p: &SaParams<S>) -> Result<(Mat<S>, SaCache<S>)> {
    let t = p.wq.rows();
    check_rows(x, t, "sa_forward")?;
    let q = matmul_rows_seq(x, &p.wq);
    let k = matmul_rows_seq(x, &p.wk);
    let v = matmul_rows_seq(x, &p.wv);
    let inv_scale = S::from_f64(1.0 / (t as f64).sqrt());
    let mut scores = matmul_rows_seq(&q, &k);
    for s in scores.data_mut() {
        *s *= inv_scale;
    }
    let attn = softmax_rows_canonical(&scores);
    let mix = sorted_mix(&attn, &v);
    let mut out = x.clone();
    for (o, m) in out.data_mut().iter_mut().zip(mix.data()) {
        *o += *m;
    }
    Ok((out, SaCache { q, k, v, attn }))
}

/// Gradients of [`sa_forward`] w.r.t. the input and the three maps.
pub fn sa_backward<S: Scalar>(
    x: &Mat<S>,
    p: &SaParams<S>,
    cache: &SaCache<S>,
    dy: &Mat<S>,
) -> Result<(Mat<S>, SaParams<S>)> {
    let t = p.wq.rows();
    check_rows(x, t, "sa_backward")?;
    if dy.rows() != x.rows() || dy.cols() != x.cols() {
        return Err(Error::Dim(format!(
            "sa_backward: dy {}x{} does not match x {}x{}",
            dy.rows(),
            dy.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let c = x.rows();
    let inv_scale = S::from_f64(1.0 / (t as f64).sqrt());

    // mix = attn v; out = x + mix
    let dattn = matmul_rows_seq(dy, &cache.v);
    let mut dv = Mat::zeros(c, t);
    for i in 0..c {
        let ar = cache.attn.row(i);
        for j in 0..c {
            axpy(ar[j], dy.row(i), dv.row_mut(j));
        }
    }
    let mut dscores = softmax_rows_backward(&cache.attn, &dattn)?;
    for s in dscores.data_mut() {
        *s *= inv_scale;
    }
    let mut dq = Mat::zeros(c, t);
    let mut dk = Mat::zeros(c, t);
    for i in 0..c {
        let dsr = dscores.row(i);
        for j in 0..c {
            axpy(dsr[j], cache.k.row(j), dq.row_mut(i));
        }
    }
    for i in 0..c {
        let dsr = dscores.row(i);
        for j in 0..c {
            axpy(dsr[j], cache.q.row(i), dk.row_mut(j));
        }
    }

    let mut dx = dy.clone();
    let mut grads = SaParams::zeros(t);
    for (dproj, w, dw) in [
        (&dq, &p.wq, &mut grads.wq),
        (&dk, &p.wk, &mut grads.wk),
        (&dv, &p.wv, &mut grads.wv),
    ] {
        // proj[i,j] = dot(x.row(i), w.row(j))
        for i in 0..c {
            let dpr = dproj.row(i);
            for (j, &g) in dpr.iter().enumerate() {
                axpy(g, w.row(j), dx.row_mut(i));
                axpy(g, x.row(i), dw.row_mut(j));
            }
        }
    }
    Ok((dx, grads))
}

/// Forward state the graph-attention backward pass consumes. `pre` holds the
/// logits before the leaky rectification (its sign picks the branch slope).
#[derive(Clone, Debug)]
pub struct GaCache<S> {
    pub h: Mat<S>,
    pub pre: Mat<S>,
    pub alpha: Mat<S>,
}

/// Graph attention over a fully connected electrode graph (self-loops
/// included): h_i = W x_i, logits e_ij = leaky(a1.h_i + a2.h_j), rows
/// softmaxed into alpha, out_i = [x_i +] sum_j alpha_ij h_j.
pub fn ga_forward<S: Scalar>(
    x: &Mat<S>,
    p: &GaParams<S>,
    residual: bool,
) -> Result<(Mat<S>, GaCache<S>)> {
    let t = p.w.rows();
    check_rows(x, t, "ga_forward")?;
    let c = x.rows();
    let h = matmul_rows_seq(x, &p.w);
    let (a1, a2) = p.a.split_at(t);
    let slope = S::from_f64(LEAKY_SLOPE);

    let mut u = vec![S::zero(); c];
    let mut v = vec![S::zero(); c];
    for i in 0..c {
        u[i] = dot(a1, h.row(i));
        v[i] = dot(a2, h.row(i));
    }
    let mut pre = Mat::zeros(c, c);
    for i in 0..c {
        let row = pre.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = u[i] + v[j];
        }
    }
    let mut logits = pre.clone();
    for e in logits.data_mut() {
        if *e <= S::zero() {
            *e *= slope;
        }
    }
    let alpha = softmax_rows_canonical(&logits);
    let mix = sorted_mix(&alpha, &h);
    let out = if residual {
        let mut out = x.clone();
        for (o, m) in out.data_mut().iter_mut().zip(mix.data()) {
            *o += *m;
        }
        out
    } else {
        mix
    };
    Ok((out, GaCache { h, pre, alpha }))
}

/// Gradients of [`ga_forward`] w.r.t. the input, the shared map, and the
/// interaction vector. The rectifier's derivative at exactly zero uses the
/// negative-side slope.
pub fn ga_backward<S: Scalar>(
    x: &Mat<S>,
    p: &GaParams<S>,
    cache: &GaCache<S>,
    dy: &Mat<S>,
    residual: bool,
) -> Result<(Mat<S>, GaParams<S>)> {
    let t = p.w.rows();
    check_rows(x, t, "ga_backward")?;
    if dy.rows() != x.rows() || dy.cols() != x.cols() {
        return Err(Error::Dim(format!(
            "ga_backward: dy {}x{} does not match x {}x{}",
            dy.rows(),
            dy.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let c = x.rows();
    let (a1, a2) = p.a.split_at(t);
    let slope = S::from_f64(LEAKY_SLOPE);

    let dalpha = matmul_rows_seq(dy, &cache.h);
    let mut dh = Mat::zeros(c, t);
    for i in 0..c {
        let ar = cache.alpha.row(i);
        for j in 0..c {
            axpy(ar[j], dy.row(i), dh.row_mut(j));
        }
    }
    let dlogits = softmax_rows_backward(&cache.alpha, &dalpha)?;
    let mut du = vec![S::zero(); c];
    let mut dv = vec![S::zero(); c];
    for i in 0..c {
        let dlr = dlogits.row(i);
        let prer = cache.pre.row(i);
        for j in 0..c {
            let g = if prer[j] > S::zero() {
                dlr[j]
            } else {
                dlr[j] * slope
            };
            du[i] += g;
            dv[j] += g;
        }
    }
    let mut grads = GaParams::zeros(t);
    {
        let (da1, da2) = grads.a.split_at_mut(t);
        for i in 0..c {
            axpy(du[i], cache.h.row(i), da1);
            axpy(dv[i], cache.h.row(i), da2);
            axpy(du[i], a1, dh.row_mut(i));
            axpy(dv[i], a2, dh.row_mut(i));
        }
    }
    let mut dx = if residual { dy.clone() } else { Mat::zeros(c, t) };
    for i in 0..c {
        let dhr = dh.row(i);
        for (j, &g) in dhr.iter().enumerate() {
            axpy(g, p.w.row(j), dx.row_mut(i));
            axpy(g, x.row(i), grads.w.row_mut(j));
        }
    }
    Ok((dx, grads))
}

/// Per-trial forward state for a batched module application.
#[derive(Clone, Debug)]
pub enum ModuleCache<S> {
    None,
    Sa(Vec<SaCache<S>>),
    Ga(Vec<GaCache<S>>),
}

fn trial_mat<S: Scalar>(x: &Tensor4<S>, n: usize) -> Mat<S> {
    let [_, _, c, t] = x.dims();
    Mat::from_vec(c, t, x.trial(n).to_vec()).expect("trial slice matches (c,t)")
}

/// Applies the module to every trial of a (b,1,C,T) batch.
pub fn module_forward<S: Scalar>(
    x: &Tensor4<S>,
    module: &SpatialModule<S>,
    ga_residual: bool,
) -> Result<(Tensor4<S>, ModuleCache<S>)> {
    let [b, maps, _, _] = x.dims();
    if maps != 1 {
        return Err(Error::Dim(format!(
            "spatial module expects a single input map, got {maps}"
        )));
    }
    let mut out = Tensor4::zeros(x.dims());
    match module {
        SpatialModule::None => Ok((x.clone(), ModuleCache::None)),
        SpatialModule::Sa(p) => {
            let mut caches = Vec::with_capacity(b);
            for n in 0..b {
                let xm = trial_mat(x, n);
                let (y, cache) = sa_forward(&xm, p)?;
                out.trial_mut(n).copy_from_slice(y.data());
                caches.push(cache);
            }
            Ok((out, ModuleCache::Sa(caches)))
        }
        SpatialModule::Ga(p) => {
            let mut caches = Vec::with_capacity(b);
            for n in 0..b {
                let xm = trial_mat(x, n);
                let (y, cache) = ga_forward(&xm, p, ga_residual)?;
                out.trial_mut(n).copy_from_slice(y.data());
                caches.push(cache);
            }
            Ok((out, ModuleCache::Ga(caches)))
        }
    }
}

/// Batched backward; parameter gradients accumulate over trials in trial
/// order. Returns (d input, module gradients).
pub fn module_backward<S: Scalar>(
    x: &Tensor4<S>,
    module: &SpatialModule<S>,
    cache: &ModuleCache<S>,
    dy: &Tensor4<S>,
    ga_residual: bool,
) -> Result<(Tensor4<S>, SpatialModule<S>)> {
    if x.dims() != dy.dims() {
        return Err(Error::Dim(format!(
            "module backward: dy {:?} does not match x {:?}",
            dy.dims(),
            x.dims()
        )));
    }
    let [b, _, _, _] = x.dims();
    let mut dx = Tensor4::zeros(x.dims());
    match (module, cache) {
        (SpatialModule::None, ModuleCache::None) => Ok((dy.clone(), SpatialModule::None)),
        (SpatialModule::Sa(p), ModuleCache::Sa(caches)) if caches.len() == b => {
            let t = p.wq.rows();
            let mut grads = SaParams::zeros(t);
            for n in 0..b {
                let xm = trial_mat(x, n);
                let dym = trial_mat(dy, n);
                let (dxm, g) = sa_backward(&xm, p, &caches[n], &dym)?;
                dx.trial_mut(n).copy_from_slice(dxm.data());
                for (acc, v) in grads.wq.data_mut().iter_mut().zip(g.wq.data()) {
                    *acc += *v;
                }
                for (acc, v) in grads.wk.data_mut().iter_mut().zip(g.wk.data()) {
                    *acc += *v;
                }
                for (acc, v) in grads.wv.data_mut().iter_mut().zip(g.wv.data()) {
                    *acc += *v;
                }
            }
            Ok((dx, SpatialModule::Sa(grads)))
        }
        (SpatialModule::Ga(p), ModuleCache::Ga(caches)) if caches.len() == b => {
            let t = p.w.rows();
            let mut grads = GaParams::zeros(t);
            for n in 0..b {
                let xm = trial_mat(x, n);
                let dym = trial_mat(dy, n);
                let (dxm, g) = ga_backward(&xm, p, &caches[n], &dym, ga_residual)?;
                dx.trial_mut(n).copy_from_slice(dxm.data());
                for (acc, v) in grads.w.data_mut().iter_mut().zip(g.w.data()) {
                    *acc += *v;
                }
                for (acc, v) in grads.a.iter_mut().zip(&g.a) {
                    *acc += *v;
                }
            }
            Ok((dx, SpatialModule::Ga(grads)))
        }
        _ => Err(Error::Dim(
            "module backward: cache does not match the module or batch".into(),
        )),
    }
}
