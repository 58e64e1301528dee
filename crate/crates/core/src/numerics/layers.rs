//! Primitive layers: temporal/spatial convolution, average pooling, batch
//! normalization, ELU, linear projection, and row softmax. Every forward has
//! a matching hand-derived backward.
//!
//! Convolutions and the linear layer are GEMM-backed. The temporal
//! convolution never materializes patch matrices: it feeds `gemm_strided` an
//! overlapping read-only view of each electrode row (row stride 1, column
//! stride 1), which keeps the hot path allocation-free.

use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::{Mat, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

// ---------------------------------------------------------------------------
// temporal convolution: (b,1,C,T) * (k,1,1,m1) -> (b,k,C,T-m1+1)
// ---------------------------------------------------------------------------

fn temporal_conv_check<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: &[S],
) -> Result<(usize, usize, usize, usize, usize)> {
    let [b, maps, c, t] = x.dims();
    let [k, wm, wc, m1] = w.dims();
    if maps != 1 || wm != 1 || wc != 1 {
        return Err(Error::Dim(format!(
            "temporal_conv wants x (b,1,C,T) and weights (k,1,1,m1), got x {:?}, w {:?}",
            x.dims(),
            w.dims()
        )));
    }
    if bias.len() != k {
        return Err(Error::Dim(format!(
            "temporal_conv bias length {} != {k} filters",
            bias.len()
        )));
    }
    if m1 > t {
        return Err(Error::InvalidKernel(format!(
            "temporal kernel m1={m1} exceeds sample dim T={t}"
        )));
    }
    Ok((b, c, t, k, m1))
}

pub fn temporal_conv_forward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: &[S],
) -> Result<Tensor4<S>> {
    let (b, c, t, k, m1) = temporal_conv_check(x, w, bias)?;
    let t_out = t - m1 + 1;
    let mut y = Tensor4::zeros([b, k, c, t_out]);
    let xp = x.data().as_ptr();
    let yp: *mut S = y.data_mut().as_mut_ptr();
    for n in 0..b {
        for ci in 0..c {
            // y[n,:,ci,:] = W (k,m1) x sliding-view of x[n,0,ci,:] (m1,t_out).
            let xoff = (n * c + ci) * t;
            let yoff = (n * k * c + ci) * t_out;
            unsafe {
                S::gemm_strided(
                    k,
                    m1,
                    t_out,
                    S::one(),
                    w.data().as_ptr(),
                    m1 as isize,
                    1,
                    xp.add(xoff),
                    1,
                    1,
                    S::zero(),
                    yp.add(yoff),
                    (c * t_out) as isize,
                    1,
                );
            }
        }
    }
    for n in 0..b {
        for (f, &bf) in bias.iter().enumerate() {
            for ci in 0..c {
                for v in y.row_mut(n, f, ci) {
                    *v += bf;
                }
            }
        }
    }
    Ok(y)
}

/// Returns (dx if requested, dWeights, dBias). Skipping dx saves the largest
/// GEMM when the convolution is the first layer of the network.
#[allow(clippy::type_complexity)]
pub fn temporal_conv_backward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    dy: &Tensor4<S>,
    need_dx: bool,
) -> Result<(Option<Tensor4<S>>, Tensor4<S>, Vec<S>)> {
    let (b, c, t, k, m1) = temporal_conv_check(x, w, &vec![S::zero(); w.dims()[0]])?;
    let t_out = t - m1 + 1;
    if dy.dims() != [b, k, c, t_out] {
        return Err(Error::Dim(format!(
            "temporal_conv backward: dy {:?} does not match expected {:?}",
            dy.dims(),
            [b, k, c, t_out]
        )));
    }

    let mut dbias = vec![S::zero(); k];
    for n in 0..b {
        for (f, db) in dbias.iter_mut().enumerate() {
            for ci in 0..c {
                let mut acc = S::zero();
                for v in dy.row(n, f, ci) {
                    acc += *v;
                }
                *db += acc;
            }
        }
    }

    let mut dw = Tensor4::zeros([k, 1, 1, m1]);
    let dyp = dy.data().as_ptr();
    let xp = x.data().as_ptr();
    {
        let dwp = dw.data_mut().as_mut_ptr();
        for n in 0..b {
            for ci in 0..c {
                // dW (k,m1) += dy[n,:,ci,:] (k,t_out) x patch-view (t_out,m1).
                let dyoff = (n * k * c + ci) * t_out;
                let xoff = (n * c + ci) * t;
                unsafe {
                    S::gemm_strided(
                        k,
                        t_out,
                        m1,
                        S::one(),
                        dyp.add(dyoff),
                        (c * t_out) as isize,
                        1,
                        xp.add(xoff),
                        1,
                        1,
                        S::one(),
                        dwp,
                        m1 as isize,
                        1,
                    );
                }
            }
        }
    }

    let dx = if need_dx {
        let mut dx = Tensor4::zeros([b, 1, c, t]);
        // dPatch (t_out,m1) = dy[n,:,ci,:]^T (t_out,k) x W (k,m1), then each
        // patch row scatters onto dx[n,0,ci,tt..tt+m1].
        let mut dpatch = vec![S::zero(); t_out * m1];
        for n in 0..b {
            for ci in 0..c {
                let dyoff = (n * k * c + ci) * t_out;
                unsafe {
                    S::gemm_strided(
                        t_out,
                        k,
                        m1,
                        S::one(),
                        dyp.add(dyoff),
                        1,
                        (c * t_out) as isize,
                        w.data().as_ptr(),
                        m1 as isize,
                        1,
                        S::zero(),
                        dpatch.as_mut_ptr(),
                        m1 as isize,
                        1,
                    );
                }
                let drow = dx.row_mut(n, 0, ci);
                for tt in 0..t_out {
                    let src = &dpatch[tt * m1..(tt + 1) * m1];
                    let dst = &mut drow[tt..tt + m1];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
        Some(dx)
    } else {
        None
    };

    Ok((dx, dw, dbias))
}

// ---------------------------------------------------------------------------
// average pooling over the sample axis
// ---------------------------------------------------------------------------

fn pool_out_len(t: usize, m2: usize, s2: usize) -> Result<usize> {
    if s2 == 0 {
        return Err(Error::Argument("avg_pool stride must be >= 1".into()));
    }
    if m2 == 0 || m2 > t {
        return Err(Error::InvalidKernel(format!(
            "avg_pool kernel m2={m2} invalid for sample dim {t}"
        )));
    }
    // Windows lie fully inside the signal; a trailing partial window is dropped.
    Ok((t - m2) / s2 + 1)
}

pub fn avg_pool_forward<S: Scalar>(x: &Tensor4<S>, m2: usize, s2: usize) -> Result<Tensor4<S>> {
    let [b, maps, c, t] = x.dims();
    let l_out = pool_out_len(t, m2, s2)?;
    let inv = S::one() / S::from_f64(m2 as f64);
    let mut y = Tensor4::zeros([b, maps, c, l_out]);
    for n in 0..b {
        for f in 0..maps {
            for ci in 0..c {
                let src = x.row(n, f, ci);
                let dst = y.row_mut(n, f, ci);
                for (u, d) in dst.iter_mut().enumerate() {
                    let mut acc = S::zero();
                    for v in &src[u * s2..u * s2 + m2] {
                        acc += *v;
                    }
                    *d = acc * inv;
                }
            }
        }
    }
    Ok(y)
}

pub fn avg_pool_backward<S: Scalar>(
    x_dims: [usize; 4],
    m2: usize,
    s2: usize,
    dy: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    let [b, maps, c, t] = x_dims;
    let l_out = pool_out_len(t, m2, s2)?;
    if dy.dims() != [b, maps, c, l_out] {
        return Err(Error::Dim(format!(
            "avg_pool backward: dy {:?} does not match expected {:?}",
            dy.dims(),
            [b, maps, c, l_out]
        )));
    }
    let inv = S::one() / S::from_f64(m2 as f64);
    let mut dx = Tensor4::zeros(x_dims);
    for n in 0..b {
        for f in 0..maps {
            for ci in 0..c {
                let src = dy.row(n, f, ci);
                let dst = dx.row_mut(n, f, ci);
                for (u, g) in src.iter().enumerate() {
                    let share = *g * inv;
                    for v in &mut dst[u * s2..u * s2 + m2] {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// spatial convolution: (b,k,C,L) * (k,k,C,1) -> (b,k,1,L)
// ---------------------------------------------------------------------------

fn spatial_conv_check<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: &[S],
) -> Result<(usize, usize, usize, usize, usize)> {
    let [b, k_in, c, l] = x.dims();
    let [k_out, wk, wc, w1] = w.dims();
    if wk != k_in || wc != c || w1 != 1 {
        return Err(Error::Dim(format!(
            "spatial_conv weights {:?} do not match input {:?} (want (k,{k_in},{c},1))",
            w.dims(),
            x.dims()
        )));
    }
    if bias.len() != k_out {
        return Err(Error::Dim(format!(
            "spatial_conv bias length {} != {k_out} filters",
            bias.len()
        )));
    }
    Ok((b, k_in, c, l, k_out))
}

pub fn spatial_conv_forward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    bias: &[S],
) -> Result<Tensor4<S>> {
    let (b, k_in, c, l, k_out) = spatial_conv_check(x, w, bias)?;
    let mut y = Tensor4::zeros([b, k_out, 1, l]);
    for n in 0..b {
        // y[n] (k_out,L) = W (k_out, k_in*C) x x[n] (k_in*C, L).
        gemm(
            k_out,
            k_in * c,
            l,
            S::one(),
            w.data(),
            false,
            x.trial(n),
            false,
            S::zero(),
            y.trial_mut(n),
        );
        for (f, &bf) in bias.iter().enumerate() {
            for v in y.row_mut(n, f, 0) {
                *v += bf;
            }
        }
    }
    Ok(y)
}

pub fn spatial_conv_backward<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    dy: &Tensor4<S>,
) -> Result<(Tensor4<S>, Tensor4<S>, Vec<S>)> {
    let (b, k_in, c, l, k_out) = spatial_conv_check(x, w, &vec![S::zero(); w.dims()[0]])?;
    if dy.dims() != [b, k_out, 1, l] {
        return Err(Error::Dim(format!(
            "spatial_conv backward: dy {:?} does not match expected {:?}",
            dy.dims(),
            [b, k_out, 1, l]
        )));
    }
    let mut dbias = vec![S::zero(); k_out];
    for n in 0..b {
        for (f, db) in dbias.iter_mut().enumerate() {
            let mut acc = S::zero();
            for v in dy.row(n, f, 0) {
                acc += *v;
            }
            *db += acc;
        }
    }
    let mut dx = Tensor4::zeros([b, k_in, c, l]);
    let mut dw = Tensor4::zeros([k_out, k_in, c, 1]);
    for n in 0..b {
        // dx[n] (k_in*C, L) = W^T (k_in*C, k_out) x dy[n] (k_out, L).
        gemm(
            k_in * c,
            k_out,
            l,
            S::one(),
            w.data(),
            true,
            dy.trial(n),
            false,
            S::zero(),
            dx.trial_mut(n),
        );
        // dW (k_out, k_in*C) += dy[n] (k_out, L) x x[n]^T (L, k_in*C).
        gemm(
            k_out,
            l,
            k_in * c,
            S::one(),
            dy.trial(n),
            false,
            x.trial(n),
            true,
            S::one(),
            dw.data_mut(),
        );
    }
    Ok((dx, dw, dbias))
}

// ---------------------------------------------------------------------------
// batch normalization over (batch, electrodes, samples) per map
// ---------------------------------------------------------------------------

/// Learnable affine plus running statistics, one entry per map.
#[derive(Clone, Debug)]
pub struct BatchNormState<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(maps: usize) -> Self {
        BatchNormState {
            gamma: vec![S::one(); maps],
            beta: vec![S::zero(); maps],
            running_mean: vec![S::zero(); maps],
            running_var: vec![S::one(); maps],
        }
    }

    pub fn maps(&self) -> usize {
        self.gamma.len()
    }

    pub fn convert<T: Scalar>(&self) -> BatchNormState<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.as_f64())).collect();
        BatchNormState {
            gamma: conv(&self.gamma),
            beta: conv(&self.beta),
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
        }
    }
}

/// What the train-mode backward needs: normalized activations and the
/// per-map inverse standard deviation of the batch.
#[derive(Clone, Debug)]
pub struct BatchNormCache<S> {
    pub xhat: Tensor4<S>,
    pub invstd: Vec<S>,
}

fn bn_check<S: Scalar>(dims: [usize; 4], state: &BatchNormState<S>) -> Result<()> {
    if state.maps() != dims[1]
        || state.beta.len() != dims[1]
        || state.running_mean.len() != dims[1]
        || state.running_var.len() != dims[1]
    {
        return Err(Error::Dim(format!(
            "batch_norm state has {} maps, input has {}",
            state.maps(),
            dims[1]
        )));
    }
    Ok(())
}

/// Consumes `x` and reuses its buffer for the cached normalized activations.
/// Updates running statistics (biased batch variance is used for the
/// normalization itself; the running variance stores the unbiased estimate).
pub fn batch_norm_train<S: Scalar>(
    x: Tensor4<S>,
    state: &mut BatchNormState<S>,
) -> Result<(Tensor4<S>, BatchNormCache<S>)> {
    let [b, maps, c, t] = x.dims();
    bn_check(x.dims(), state)?;
    if b < 2 {
        return Err(Error::DegenerateBatch(
            "batch_norm in train mode requires batch >= 2".into(),
        ));
    }
    let n = (b * c * t) as f64;
    let eps = S::from_f64(BN_EPS);
    let mom = S::from_f64(BN_MOMENTUM);
    let one_m_mom = S::one() - mom;

    let mut xhat = x;
    let mut invstd = vec![S::zero(); maps];
    let mut y = Tensor4::zeros([b, maps, c, t]);
    let plane = c * t;
    let mut means = vec![S::zero(); maps];
    let mut vars = vec![S::zero(); maps];
    for f in 0..maps {
        let mut sum = S::zero();
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            for v in &xhat.data()[start..start + plane] {
                sum += *v;
            }
        }
        let mean = sum / S::from_f64(n);
        let mut var_acc = S::zero();
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            for v in &xhat.data()[start..start + plane] {
                let d = *v - mean;
                var_acc += d * d;
            }
        }
        let var = var_acc / S::from_f64(n);
        // one poisoned trial contaminates the whole batch through the
        // statistics; bail before any running stat is touched
        if !(mean.is_finite() && var.is_finite()) {
            return Err(Error::NonFinite(format!(
                "batch statistics of map {f} are not finite (mean {mean}, var {var})"
            )));
        }
        means[f] = mean;
        vars[f] = var;
    }
    for f in 0..maps {
        let (mean, var) = (means[f], vars[f]);
        let istd = S::one() / (var + eps).sqrt();
        invstd[f] = istd;
        let (g, be) = (state.gamma[f], state.beta[f]);
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            let xs = &mut xhat.data_mut()[start..start + plane];
            let ys = &mut y.data_mut()[start..start + plane];
            for (xv, yv) in xs.iter_mut().zip(ys.iter_mut()) {
                let h = (*xv - mean) * istd;
                *xv = h;
                *yv = g * h + be;
            }
        }
        state.running_mean[f] = one_m_mom * state.running_mean[f] + mom * mean;
        let unbiased = var * S::from_f64(n / (n - 1.0));
        state.running_var[f] = one_m_mom * state.running_var[f] + mom * unbiased;
    }
    Ok((y, BatchNormCache { xhat, invstd }))
}

pub fn batch_norm_eval<S: Scalar>(x: &Tensor4<S>, state: &BatchNormState<S>) -> Result<Tensor4<S>> {
    let [b, maps, c, t] = x.dims();
    bn_check(x.dims(), state)?;
    let eps = S::from_f64(BN_EPS);
    let mut y = Tensor4::zeros([b, maps, c, t]);
    let plane = c * t;
    for f in 0..maps {
        let istd = S::one() / (state.running_var[f] + eps).sqrt();
        let (g, be, mean) = (state.gamma[f], state.beta[f], state.running_mean[f]);
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            let xs = &x.data()[start..start + plane];
            let ys = &mut y.data_mut()[start..start + plane];
            for (xv, yv) in xs.iter().zip(ys.iter_mut()) {
                *yv = g * (*xv - mean) * istd + be;
            }
        }
    }
    Ok(y)
}

/// Train-mode backward. Returns (dx, dGamma, dBeta).
pub fn batch_norm_backward<S: Scalar>(
    cache: &BatchNormCache<S>,
    gamma: &[S],
    dy: &Tensor4<S>,
) -> Result<(Tensor4<S>, Vec<S>, Vec<S>)> {
    let [b, maps, c, t] = cache.xhat.dims();
    if dy.dims() != cache.xhat.dims() {
        return Err(Error::Dim(format!(
            "batch_norm backward: dy {:?} does not match cache {:?}",
            dy.dims(),
            cache.xhat.dims()
        )));
    }
    if gamma.len() != maps {
        return Err(Error::Dim("batch_norm backward: gamma length".into()));
    }
    let n = S::from_f64((b * c * t) as f64);
    let mut dx = Tensor4::zeros([b, maps, c, t]);
    let mut dgamma = vec![S::zero(); maps];
    let mut dbeta = vec![S::zero(); maps];
    let plane = c * t;
    for f in 0..maps {
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            let dys = &dy.data()[start..start + plane];
            let xhs = &cache.xhat.data()[start..start + plane];
            for (g, h) in dys.iter().zip(xhs) {
                sum_dy += *g;
                sum_dy_xhat += *g * *h;
            }
        }
        dgamma[f] = sum_dy_xhat;
        dbeta[f] = sum_dy;
        let scale = gamma[f] * cache.invstd[f];
        let mean_dy = sum_dy / n;
        let mean_dy_xhat = sum_dy_xhat / n;
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            let dys = &dy.data()[start..start + plane];
            let xhs = &cache.xhat.data()[start..start + plane];
            let dxs = &mut dx.data_mut()[start..start + plane];
            for ((g, h), o) in dys.iter().zip(xhs).zip(dxs.iter_mut()) {
                *o = scale * (*g - mean_dy - *h * mean_dy_xhat);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Eval-mode backward: running statistics are constants, so the layer is a
/// fixed per-map affine map.
pub fn batch_norm_eval_backward<S: Scalar>(
    state: &BatchNormState<S>,
    dy: &Tensor4<S>,
) -> Result<Tensor4<S>> {
    let [b, maps, c, t] = dy.dims();
    bn_check(dy.dims(), state)?;
    let eps = S::from_f64(BN_EPS);
    let mut dx = Tensor4::zeros([b, maps, c, t]);
    let plane = c * t;
    for f in 0..maps {
        let scale = state.gamma[f] / (state.running_var[f] + eps).sqrt();
        for nb in 0..b {
            let start = (nb * maps + f) * plane;
            let dys = &dy.data()[start..start + plane];
            let dxs = &mut dx.data_mut()[start..start + plane];
            for (g, o) in dys.iter().zip(dxs.iter_mut()) {
                *o = scale * *g;
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// ELU
// ---------------------------------------------------------------------------

pub fn elu_scalar<S: Scalar>(v: S) -> S {
    v.elu()
}

/// Derivative expressed through the output: 1 for y > 0, y + 1 otherwise
/// (equals e^x; both branches give 1 at the origin).
pub fn elu_grad_from_output<S: Scalar>(y: S) -> S {
    if y > S::zero() {
        S::one()
    } else {
        y + S::one()
    }
}

pub fn elu_forward<S: Scalar>(mut x: Tensor4<S>) -> Tensor4<S> {
    for v in x.data_mut() {
        *v = elu_scalar(*v);
    }
    x
}

pub fn elu_backward<S: Scalar>(y: &Tensor4<S>, dy: &Tensor4<S>) -> Result<Tensor4<S>> {
    if y.dims() != dy.dims() {
        return Err(Error::Dim(format!(
            "elu backward: dy {:?} does not match y {:?}",
            dy.dims(),
            y.dims()
        )));
    }
    let mut dx = dy.clone();
    for (d, yv) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= elu_grad_from_output(*yv);
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// linear projection: (b,n) x (n,D) + bias
// ---------------------------------------------------------------------------

pub fn linear_forward<S: Scalar>(x: &Mat<S>, w: &Mat<S>, bias: &[S]) -> Result<Mat<S>> {
    if x.cols() != w.rows() || bias.len() != w.cols() {
        return Err(Error::Dim(format!(
            "linear: x (.,{}) w ({},{}) bias ({})",
            x.cols(),
            w.rows(),
            w.cols(),
            bias.len()
        )));
    }
    let (b, n, d) = (x.rows(), x.cols(), w.cols());
    let mut y = Mat::zeros(b, d);
    gemm(
        b,
        n,
        d,
        S::one(),
        x.data(),
        false,
        w.data(),
        false,
        S::zero(),
        y.data_mut(),
    );
    for r in 0..b {
        for (v, bb) in y.row_mut(r).iter_mut().zip(bias) {
            *v += *bb;
        }
    }
    Ok(y)
}

#[allow(clippy::type_complexity)]
pub fn linear_backward<S: Scalar>(
    x: &Mat<S>,
    w: &Mat<S>,
    dy: &Mat<S>,
    need_dx: bool,
) -> Result<(Option<Mat<S>>, Mat<S>, Vec<S>)> {
    if x.cols() != w.rows() || dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(Error::Dim(format!(
            "linear backward: x {}x{}, w {}x{}, dy {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols(),
            dy.rows(),
            dy.cols()
        )));
    }
    let (b, n, d) = (x.rows(), x.cols(), w.cols());
    let mut dbias = vec![S::zero(); d];
    for r in 0..b {
        for (acc, v) in dbias.iter_mut().zip(dy.row(r)) {
            *acc += *v;
        }
    }
    let mut dw = Mat::zeros(n, d);
    // dW (n,D) = x^T (n,b) x dy (b,D); x is stored (b,n), so use it transposed.
    gemm(
        n,
        b,
        d,
        S::one(),
        x.data(),
        true,
        dy.data(),
        false,
        S::zero(),
        dw.data_mut(),
    );
    let dx = if need_dx {
        let mut dx = Mat::zeros(b, n);
        // dx (b,n) = dy (b,D) x W^T (D,n); W is stored (n,D), so transposed.
        gemm(
            b,
            d,
            n,
            S::one(),
            dy.data(),
            false,
            w.data(),
            true,
            S::zero(),
            dx.data_mut(),
        );
        Some(dx)
    } else {
        None
    };
    Ok((dx, dw, dbias))
}

// ---------------------------------------------------------------------------
// row softmax
// ---------------------------------------------------------------------------

/// Numerically stable row softmax (max subtraction before exponentiation).
pub fn softmax_rows<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_row_in_place(y.row_mut(r), false);
    }
    y
}

/// Row softmax whose denominator is a canonical (sorted-term) sum, making the
/// per-row result depend only on the multiset of entries. Attention modules
/// use this so electrode permutations commute with the op bit-exactly.
pub fn softmax_rows_canonical<S: Scalar>(x: &Mat<S>) -> Mat<S> {
    let mut y = x.clone();
    for r in 0..y.rows() {
        softmax_row_in_place(y.row_mut(r), true);
    }
    y
}

fn softmax_row_in_place<S: Scalar>(row: &mut [S], canonical: bool) {
    let mut mx = row[0];
    for v in row.iter().skip(1) {
        if *v > mx {
            mx = *v;
        }
    }
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
    }
    let denom = if canonical {
        let mut terms: Vec<S> = row.to_vec();
        crate::numerics::scalar::canonical_sum(&mut terms)
    } else {
        let mut acc = S::zero();
        for v in row.iter() {
            acc += *v;
        }
        acc
    };
    let inv = S::one() / denom;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// dx_ij = y_ij * (dy_ij - sum_k dy_ik y_ik).
pub fn softmax_rows_backward<S: Scalar>(y: &Mat<S>, dy: &Mat<S>) -> Result<Mat<S>> {
    if y.rows() != dy.rows() || y.cols() != dy.cols() {
        return Err(Error::Dim(format!(
            "softmax backward: dy {}x{} does not match y {}x{}",
            dy.rows(),
            dy.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let mut dx = Mat::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let mut dot = S::zero();
        for (a, b) in dyr.iter().zip(yr) {
            dot += *a * *b;
        }
        for ((o, a), b) in dx.row_mut(r).iter_mut().zip(dyr).zip(yr) {
            *o = *b * (*a - dot);
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_tensor(dims: [usize; 4]) -> Tensor4<f64> {
        let n: usize = dims.iter().product();
        Tensor4::from_vec(dims, (0..n).map(|v| (v as f64) * 0.1 - 1.3).collect()).unwrap()
    }

    #[test]
    fn temporal_conv_delta_kernel_is_identity() {
        let x = seq_tensor([2, 1, 3, 10]);
        let mut wdata = vec![0.0; 4];
        wdata[0] = 1.0;
        let w = Tensor4::from_vec([1, 1, 1, 4], wdata).unwrap();
        let y = temporal_conv_forward(&x, &w, &[0.0]).unwrap();
        assert_eq!(y.dims(), [2, 1, 3, 7]);
        for n in 0..2 {
            for ci in 0..3 {
                assert_eq!(y.row(n, 0, ci), &x.row(n, 0, ci)[..7]);
            }
        }
    }

    #[test]
    fn temporal_conv_zero_kernel_is_zero() {
        let x = seq_tensor([1, 1, 2, 8]);
        let w = Tensor4::zeros([3, 1, 1, 5]);
        let y = temporal_conv_forward(&x, &w, &[0.0; 3]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn temporal_conv_matches_direct_sum() {
        let x = seq_tensor([2, 1, 3, 9]);
        let w = Tensor4::from_vec([2, 1, 1, 4], (0..8).map(|v| 0.3 - v as f64 * 0.07).collect())
            .unwrap();
        let bias = [0.25, -0.5];
        let y = temporal_conv_forward(&x, &w, &bias).unwrap();
        for n in 0..2 {
            for f in 0..2 {
                for ci in 0..3 {
                    for t in 0..6 {
                        let mut want = bias[f];
                        for j in 0..4 {
                            want += w.at(f, 0, 0, j) * x.at(n, 0, ci, t + j);
                        }
                        let got = y.at(n, f, ci, t);
                        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn temporal_conv_is_linear_in_input() {
        let x = seq_tensor([1, 1, 2, 12]);
        let z = {
            let mut z = x.clone();
            for v in z.data_mut() {
                *v = v.cos();
            }
            z
        };
        let w = Tensor4::from_vec([2, 1, 1, 5], (0..10).map(|v| v as f64 * 0.05).collect()).unwrap();
        let bias = [0.0, 0.0];
        let (a, b) = (0.7, -1.9);
        let mut mix = x.clone();
        for (m, (xv, zv)) in mix.data_mut().iter_mut().zip(x.data().iter().zip(z.data())) {
            *m = a * xv + b * zv;
        }
        let y_mix = temporal_conv_forward(&mix, &w, &bias).unwrap();
        let y_x = temporal_conv_forward(&x, &w, &bias).unwrap();
        let y_z = temporal_conv_forward(&z, &w, &bias).unwrap();
        for i in 0..y_mix.len() {
            let want = a * y_x.data()[i] + b * y_z.data()[i];
            assert!((y_mix.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_conv_rejects_long_kernel() {
        let x = seq_tensor([1, 1, 2, 4]);
        let w = Tensor4::zeros([1, 1, 1, 5]);
        assert!(matches!(
            temporal_conv_forward(&x, &w, &[0.0]),
            Err(crate::Error::InvalidKernel(_))
        ));
    }

    #[test]
    fn avg_pool_basics() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = avg_pool_forward(&x, 3, 1).unwrap();
        assert_eq!(y.data(), &[2.0]);

        let c = Tensor4::from_vec([1, 2, 2, 7], vec![2.5; 28]).unwrap();
        let y = avg_pool_forward(&c, 3, 2).unwrap();
        assert_eq!(y.dims(), [1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 2.5));

        // 226-sample rows pooled with kernel 51 stride 5 give 36 samples.
        let wide = Tensor4::<f64>::zeros([1, 1, 1, 226]);
        assert_eq!(avg_pool_forward(&wide, 51, 5).unwrap().dims()[3], 36);

        assert!(matches!(
            avg_pool_forward(&x, 4, 1),
            Err(crate::Error::InvalidKernel(_))
        ));
    }

    #[test]
    fn avg_pool_backward_distributes_evenly() {
        let dims = [1, 1, 1, 5];
        let dy = Tensor4::from_vec([1, 1, 1, 2], vec![3.0, 6.0]).unwrap();
        let dx = avg_pool_backward(dims, 3, 2, &dy).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn spatial_conv_shapes_and_zero_kernel() {
        let x = seq_tensor([2, 3, 4, 6]);
        let w = Tensor4::zeros([3, 3, 4, 1]);
        let y = spatial_conv_forward(&x, &w, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y.dims(), [2, 3, 1, 6]);
        for n in 0..2 {
            for f in 0..3 {
                assert!(y.row(n, f, 0).iter().all(|&v| v == (f + 1) as f64));
            }
        }
    }

    #[test]
    fn spatial_conv_single_electrode_identity() {
        // C=1, one input map routed straight through per output map.
        let x = seq_tensor([1, 2, 1, 5]);
        let mut w = Tensor4::zeros([2, 2, 1, 1]);
        w.set(0, 0, 0, 0, 1.0);
        w.set(1, 1, 0, 0, 1.0);
        let y = spatial_conv_forward(&x, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(y.row(0, 0, 0), x.row(0, 0, 0));
        assert_eq!(y.row(0, 1, 0), x.row(0, 1, 0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn spatial_conv_matches_direct_sum() {
        let x = seq_tensor([1, 2, 3, 4]);
        let w = Tensor4::from_vec(
            [2, 2, 3, 1],
            (0..12).map(|v| (v as f64 * 1.7).sin()).collect(),
        )
        .unwrap();
        let bias = [0.1, -0.2];
        let y = spatial_conv_forward(&x, &w, &bias).unwrap();
        for f in 0..2 {
            for t in 0..4 {
                let mut want = bias[f];
                for ki in 0..2 {
                    for ci in 0..3 {
                        want += w.at(f, ki, ci, 0) * x.at(0, ki, ci, t);
                    }
                }
                assert!((y.at(0, f, 0, t) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_norm_normalizes_then_affines() {
        let mut state = BatchNormState::<f64>::new(2);
        state.beta = vec![5.0, 5.0];
        state.gamma = vec![0.0, 0.0];
        let x = seq_tensor([4, 2, 3, 5]);
        let (y, _) = batch_norm_train(x, &mut state).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batch_norm_train_statistics() {
        let mut state = BatchNormState::<f64>::new(3);
        let n: usize = 8 * 3 * 4 * 6;
        let x = Tensor4::from_vec(
            [8, 3, 4, 6],
            (0..n).map(|v| ((v * 2654435761) % 1000) as f64 / 100.0).collect(),
        )
        .unwrap();
        let (y, _) = batch_norm_train(x, &mut state).unwrap();
        let plane = 4 * 6;
        for f in 0..3 {
            let mut mean = 0.0;
            let mut var = 0.0;
            let cnt = (8 * plane) as f64;
            for nb in 0..8 {
                for v in y.trial(nb)[f * plane..(f + 1) * plane].iter() {
                    mean += v;
                }
            }
            mean /= cnt;
            for nb in 0..8 {
                for v in y.trial(nb)[f * plane..(f + 1) * plane].iter() {
                    var += (v - mean) * (v - mean);
                }
            }
            var /= cnt;
            assert!(mean.abs() < 1e-6, "map {f} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "map {f} var {var}");
        }
    }

    #[test]
    fn batch_norm_rejects_singleton_batch() {
        let mut state = BatchNormState::<f64>::new(1);
        let x = seq_tensor([1, 1, 2, 3]);
        assert!(matches!(
            batch_norm_train(x, &mut state),
            Err(crate::Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn batch_norm_rejects_poisoned_statistics() {
        let mut state = BatchNormState::<f64>::new(2);
        let mut x = seq_tensor([3, 2, 2, 2]);
        x.set(1, 1, 0, 1, f64::NAN);
        let before = state.running_mean.clone();
        assert!(matches!(
            batch_norm_train(x, &mut state),
            Err(crate::Error::NonFinite(_))
        ));
        // running stats stay untouched on failure
        assert_eq!(state.running_mean, before);
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu_scalar(0.0f64), 0.0);
        assert_eq!(elu_scalar(1.0f64), 1.0);
        let v: f64 = elu_scalar(-1.0);
        assert!((v - (-0.6321205588285577)).abs() < 1e-15);
    }

    #[test]
    fn linear_identity_passthrough() {
        let x = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut w = Mat::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let y = linear_forward(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn softmax_rows_values_and_stability() {
        let x = Mat::<f64>::from_vec(3, 2, vec![0.0, 0.0, 1.0, 0.0, 1000.0, 0.0]).unwrap();
        let y = softmax_rows(&x);
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!((y.at(1, 0) - 0.7310585786300049).abs() < 1e-15);
        assert!((y.at(1, 1) - 0.2689414213699951).abs() < 1e-15);
        assert_eq!(y.at(2, 0), 1.0);
        assert!(y.at(2, 1) >= 0.0 && y.at(2, 1) < 1e-300);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let x = Mat::from_vec(
            4,
            7,
            (0..28).map(|v| ((v * 37) % 19) as f64 * 0.37 - 3.0).collect(),
        )
        .unwrap();
        let y = softmax_rows(&x);
        for r in 0..4 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let mut shifted = x.clone();
        for v in shifted.data_mut() {
            *v += 4.25;
        }
        let y2 = softmax_rows(&shifted);
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
