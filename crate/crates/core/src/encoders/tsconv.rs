//! The EEG encoder: optional electrode-attention module, temporal
//! convolution, batch norm, ELU, average pooling, spatial convolution across
//! all electrodes, batch norm, ELU, and a linear projection into the image
//! feature space.
//!
//! Train and eval paths are split because batch norm behaves differently in
//! each: [`forward_train`] updates running statistics and returns the cache
//! the backward pass needs, while [`forward_eval`] normalizes with the stored
//! statistics and processes trials in fixed-size chunks to bound memory.

use crate::error::{Error, Result};
use crate::numerics::layers::{
    avg_pool_backward, avg_pool_forward, batch_norm_backward, batch_norm_eval,
    batch_norm_eval_backward, batch_norm_train, elu_backward, elu_forward, elu_grad_from_output,
    linear_backward, linear_forward, spatial_conv_backward, spatial_conv_forward,
    temporal_conv_backward, temporal_conv_forward, BatchNormCache,
};
use crate::numerics::{Mat, Scalar, Tensor4};

use super::attention::{module_backward, module_forward, ModuleCache};
use super::{EncoderGrads, EncoderParams, SpatialModule};

/// Trials per chunk in the eval path; `forward_eval` uses this when the
/// caller passes 0.
pub const EVAL_CHUNK: usize = 64;

fn check_input<S: Scalar>(params: &EncoderParams<S>, dims: [usize; 4]) -> Result<()> {
    let [_, maps, c, t] = dims;
    if maps != 1 || c != params.hyper.c || t != params.hyper.t {
        return Err(Error::Dim(format!(
            "encoder input {:?} does not match configured (1, {}, {})",
            dims, params.hyper.c, params.hyper.t
        )));
    }
    Ok(())
}

/// Every intermediate the backward pass reads. ELU gradients are recovered
/// from the stored outputs (`elu1`, `flat`), so no activation input or
/// transcendental call is needed going backward.
pub struct TrainCache<S> {
    /// Module input, i.e. the raw batch.
    x0: Tensor4<S>,
    /// Module output; `None` when no module is configured (conv reads `x0`).
    xm: Option<Tensor4<S>>,
    module: ModuleCache<S>,
    bn1: BatchNormCache<S>,
    /// First ELU output (= pooling input).
    elu1: Tensor4<S>,
    /// Pooling output (= spatial conv input).
    pooled: Tensor4<S>,
    bn2: BatchNormCache<S>,
    /// Second ELU output flattened (= projection input), (b, k * l_pool).
    flat: Mat<S>,
}

/// Training-mode forward. Consumes the batch (it is cached for the backward
/// pass) and updates the running batch-norm statistics in `params`.
/// Returns the (b, D) embeddings and the backward cache.
pub fn forward_train<S: Scalar>(
    x: Tensor4<S>,
    params: &mut EncoderParams<S>,
) -> Result<(Mat<S>, TrainCache<S>)> {
    check_input(params, x.dims())?;
    let h = params.hyper;
    let (xm, module) = match &params.module {
        SpatialModule::None => (None, ModuleCache::None),
        m => {
            let (y, cache) = module_forward(&x, m, h.ga_residual)?;
            (Some(y), cache)
        }
    };
    let conv_in = xm.as_ref().unwrap_or(&x);
    let conv = temporal_conv_forward(conv_in, &params.temporal_w, &params.temporal_b)?;
    let (bn1_out, bn1) = batch_norm_train(conv, &mut params.bn1)?;
    let elu1 = elu_forward(bn1_out);
    let pooled = avg_pool_forward(&elu1, h.m2, h.s2)?;
    let sconv = spatial_conv_forward(&pooled, &params.spatial_w, &params.spatial_b)?;
    let (bn2_out, bn2) = batch_norm_train(sconv, &mut params.bn2)?;
    let flat = elu_forward(bn2_out).into_mat();
    let out = linear_forward(&flat, &params.proj_w, &params.proj_b)?;
    let cache = TrainCache {
        x0: x,
        xm,
        module,
        bn1,
        elu1,
        pooled,
        bn2,
        flat,
    };
    Ok((out, cache))
}

/// Backpropagates `dy` (gradient at the embeddings) through the whole
/// encoder. `need_dx` additionally returns the gradient at the raw input.
/// The returned grads leave `log_t` at zero; the temperature belongs to the
/// loss, not the encoder.
pub fn backward_train<S: Scalar>(
    params: &EncoderParams<S>,
    cache: &TrainCache<S>,
    dy: &Mat<S>,
    need_dx: bool,
) -> Result<(Option<Tensor4<S>>, EncoderGrads<S>)> {
    let h = params.hyper;
    let [b, _, _, _] = cache.x0.dims();
    if dy.rows() != b || dy.cols() != h.d {
        return Err(Error::Dim(format!(
            "encoder backward: dy {}x{} does not match ({b}, {})",
            dy.rows(),
            dy.cols(),
            h.d
        )));
    }
    let mut grads = EncoderGrads::zeros_like(params);

    let (dflat, dproj_w, dproj_b) = linear_backward(&cache.flat, &params.proj_w, dy, true)?;
    grads.proj_w = dproj_w;
    grads.proj_b = dproj_b;

    let mut dflat = dflat.expect("need_dx was set");
    for (g, &y) in dflat.data_mut().iter_mut().zip(cache.flat.data()) {
        *g *= elu_grad_from_output(y);
    }
    let l = h.l_pool();
    let dbn2_out = Tensor4::from_vec([b, h.k, 1, l], dflat.into_data())?;

    let (dsconv, dg2, db2) = batch_norm_backward(&cache.bn2, &params.bn2.gamma, &dbn2_out)?;
    grads.bn2_gamma = dg2;
    grads.bn2_beta = db2;

    let (dpooled, dspatial_w, dspatial_b) =
        spatial_conv_backward(&cache.pooled, &params.spatial_w, &dsconv)?;
    grads.spatial_w = dspatial_w;
    grads.spatial_b = dspatial_b;

    let delu1 = avg_pool_backward(cache.elu1.dims(), h.m2, h.s2, &dpooled)?;
    let dbn1_out = elu_backward(&cache.elu1, &delu1)?;
    let (dconv, dg1, db1) = batch_norm_backward(&cache.bn1, &params.bn1.gamma, &dbn1_out)?;
    grads.bn1_gamma = dg1;
    grads.bn1_beta = db1;

    let has_module = !matches!(params.module, SpatialModule::None);
    let conv_in = cache.xm.as_ref().unwrap_or(&cache.x0);
    let (dconv_in, dtemporal_w, dtemporal_b) = temporal_conv_backward(
        conv_in,
        &params.temporal_w,
        &dconv,
        need_dx || has_module,
    )?;
    grads.temporal_w = dtemporal_w;
    grads.temporal_b = dtemporal_b;

    let dx = if has_module {
        let dxm = dconv_in.expect("dx requested through the module");
        let (dx0, dmodule) =
            module_backward(&cache.x0, &params.module, &cache.module, &dxm, h.ga_residual)?;
        grads.module = dmodule;
        need_dx.then_some(dx0)
    } else {
        dconv_in
    };
    Ok((dx, grads))
}

fn eval_chunk<S: Scalar>(params: &EncoderParams<S>, x: &Tensor4<S>) -> Result<Mat<S>> {
    let h = params.hyper;
    let conv = match &params.module {
        SpatialModule::None => temporal_conv_forward(x, &params.temporal_w, &params.temporal_b)?,
        m => {
            let (xm, _) = module_forward(x, m, h.ga_residual)?;
            temporal_conv_forward(&xm, &params.temporal_w, &params.temporal_b)?
        }
    };
    let elu1 = elu_forward(batch_norm_eval(&conv, &params.bn1)?);
    let pooled = avg_pool_forward(&elu1, h.m2, h.s2)?;
    let sconv = spatial_conv_forward(&pooled, &params.spatial_w, &params.spatial_b)?;
    let flat = elu_forward(batch_norm_eval(&sconv, &params.bn2)?).into_mat();
    linear_forward(&flat, &params.proj_w, &params.proj_b)
}

/// Inference-mode forward using running batch-norm statistics, processing
/// `chunk` trials at a time (0 selects [`EVAL_CHUNK`]). Chunking only bounds
/// peak memory: every per-trial value is identical regardless of chunk size.
pub fn forward_eval<S: Scalar>(
    params: &EncoderParams<S>,
    x: &Tensor4<S>,
    chunk: usize,
) -> Result<Mat<S>> {
    check_input(params, x.dims())?;
    let [b, _, c, t] = x.dims();
    let chunk = if chunk == 0 { EVAL_CHUNK } else { chunk };
    let mut out = Mat::zeros(b, params.hyper.d);
    let plane = c * t;
    let mut n0 = 0;
    while n0 < b {
        let n1 = (n0 + chunk).min(b);
        let part = Tensor4::from_vec(
            [n1 - n0, 1, c, t],
            x.data()[n0 * plane..n1 * plane].to_vec(),
        )?;
        let y = eval_chunk(params, &part)?;
        out.data_mut()[n0 * params.hyper.d..n1 * params.hyper.d].copy_from_slice(y.data());
        n0 = n1;
    }
    Ok(out)
}

/// Eval-mode intermediates for attribution: enough to retrace the gradient
/// from the embeddings back to the module output.
pub struct EvalTrace<S> {
    /// Module output (equals the input when no module is configured).
    pub xm: Tensor4<S>,
    elu1: Tensor4<S>,
    pooled: Tensor4<S>,
    flat: Mat<S>,
}

/// Eval forward that records the intermediates needed by [`backward_eval`].
/// Runs unchunked; attribution batches are expected to be small.
pub fn forward_eval_trace<S: Scalar>(
    params: &EncoderParams<S>,
    x: &Tensor4<S>,
) -> Result<(Mat<S>, EvalTrace<S>)> {
    check_input(params, x.dims())?;
    let h = params.hyper;
    let xm = match &params.module {
        SpatialModule::None => x.clone(),
        m => module_forward(x, m, h.ga_residual)?.0,
    };
    let conv = temporal_conv_forward(&xm, &params.temporal_w, &params.temporal_b)?;
    let elu1 = elu_forward(batch_norm_eval(&conv, &params.bn1)?);
    let pooled = avg_pool_forward(&elu1, h.m2, h.s2)?;
    let sconv = spatial_conv_forward(&pooled, &params.spatial_w, &params.spatial_b)?;
    let flat = elu_forward(batch_norm_eval(&sconv, &params.bn2)?).into_mat();
    let out = linear_forward(&flat, &params.proj_w, &params.proj_b)?;
    Ok((
        out,
        EvalTrace {
            xm,
            elu1,
            pooled,
            flat,
        },
    ))
}

/// Backpropagates `dy` through the eval-mode graph down to the module
/// output, i.e. the gradient at [`EvalTrace::xm`]. Batch-norm layers use
/// their running statistics, matching the forward trace.
pub fn backward_eval<S: Scalar>(
    params: &EncoderParams<S>,
    trace: &EvalTrace<S>,
    dy: &Mat<S>,
) -> Result<Tensor4<S>> {
    let h = params.hyper;
    let [b, _, _, _] = trace.xm.dims();
    if dy.rows() != b || dy.cols() != h.d {
        return Err(Error::Dim(format!(
            "eval backward: dy {}x{} does not match ({b}, {})",
            dy.rows(),
            dy.cols(),
            h.d
        )));
    }
    let (dflat, _, _) = linear_backward(&trace.flat, &params.proj_w, dy, true)?;
    let mut dflat = dflat.expect("need_dx was set");
    for (g, &y) in dflat.data_mut().iter_mut().zip(trace.flat.data()) {
        *g *= elu_grad_from_output(y);
    }
    let dbn2_out = Tensor4::from_vec([b, h.k, 1, h.l_pool()], dflat.into_data())?;
    let dsconv = batch_norm_eval_backward(&params.bn2, &dbn2_out)?;
    let (dpooled, _, _) = spatial_conv_backward(&trace.pooled, &params.spatial_w, &dsconv)?;
    let delu1 = avg_pool_backward(trace.elu1.dims(), h.m2, h.s2, &dpooled)?;
    let dbn1_out = elu_backward(&trace.elu1, &delu1)?;
    let dconv = batch_norm_eval_backward(&params.bn1, &dbn1_out)?;
    let (dxm, _, _) = temporal_conv_backward(&trace.xm, &params.temporal_w, &dconv, true)?;
    Ok(dxm.expect("need_dx was set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_params, HyperParams, ModuleKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn small(module: ModuleKind) -> HyperParams {
        HyperParams {
            k: 3,
            m1: 5,
            m2: 7,
            s2: 3,
            ..HyperParams::new(4, 30, 6).with_module(module)
        }
    }

    fn rand_batch(b: usize, c: usize, t: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..b * c * t).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Tensor4::from_vec([b, 1, c, t], data).unwrap()
    }

    #[test]
    fn zero_input_with_zero_shift_terms_maps_to_zero() {
        let h = small(ModuleKind::None);
        let mut params = init_params(h, 0).unwrap();
        for v in params.temporal_b.iter_mut() {
            *v = 0.0;
        }
        for v in params.spatial_b.iter_mut() {
            *v = 0.0;
        }
        for v in params.proj_b.iter_mut() {
            *v = 0.0;
        }
        let x = Tensor4::zeros([3, 1, h.c, h.t]);
        let (y, _) = forward_train(x, &mut params).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn reference_geometry_produces_expected_embedding_shape() {
        let h = HyperParams::new(63, 250, 768);
        assert_eq!(h.flatten_len(), 1440);
        let mut params = init_params(h, 1).unwrap();
        let x = rand_batch(2, 63, 250, 7);
        let (y, cache) = forward_train(x, &mut params).unwrap();
        assert_eq!((y.rows(), y.cols()), (2, 768));
        assert_eq!(cache.flat.cols(), 1440);
    }

    #[test]
    fn absent_module_is_a_bit_exact_identity_plug_in() {
        let h = small(ModuleKind::None);
        let params = init_params(h, 2).unwrap();
        let params32 = params.convert::<f32>();
        let x = rand_batch(4, h.c, h.t, 8);
        let x32 = Tensor4::from_vec(x.dims(), x.data().iter().map(|&v| v as f32).collect()).unwrap();

        // manual layer chain, no module step at all
        let conv = temporal_conv_forward(&x32, &params32.temporal_w, &params32.temporal_b).unwrap();
        let mut bn1 = params32.bn1.clone();
        let (b1, _) = batch_norm_train(conv, &mut bn1).unwrap();
        let e1 = elu_forward(b1);
        let p = avg_pool_forward(&e1, h.m2, h.s2).unwrap();
        let sc = spatial_conv_forward(&p, &params32.spatial_w, &params32.spatial_b).unwrap();
        let mut bn2 = params32.bn2.clone();
        let (b2, _) = batch_norm_train(sc, &mut bn2).unwrap();
        let flat = elu_forward(b2).into_mat();
        let want = linear_forward(&flat, &params32.proj_w, &params32.proj_b).unwrap();

        let mut params32b = params.convert::<f32>();
        let (got, _) = forward_train(x32, &mut params32b).unwrap();
        assert_eq!(got.data(), want.data());
        assert_eq!(bn1.running_mean, params32b.bn1.running_mean);
        assert_eq!(bn2.running_var, params32b.bn2.running_var);
    }

    #[test]
    fn eval_chunking_is_bit_identical() {
        for kind in [ModuleKind::None, ModuleKind::Sa, ModuleKind::Ga] {
            let h = small(kind);
            let mut params = init_params(h, 3).unwrap();
            // a train step so running stats are not at their init values
            let (_, _) = forward_train(rand_batch(6, h.c, h.t, 9), &mut params).unwrap();
            let x = rand_batch(7, h.c, h.t, 10);
            let full = forward_eval(&params, &x, 7).unwrap();
            for chunk in [1usize, 2, 3, 64] {
                let part = forward_eval(&params, &x, chunk).unwrap();
                assert_eq!(part.data(), full.data(), "module {kind:?} chunk {chunk}");
            }
        }
    }

    #[test]
    fn eval_trace_matches_plain_eval() {
        let h = small(ModuleKind::Ga);
        let mut params = init_params(h, 4).unwrap();
        let (_, _) = forward_train(rand_batch(5, h.c, h.t, 11), &mut params).unwrap();
        let x = rand_batch(3, h.c, h.t, 12);
        let plain = forward_eval(&params, &x, 0).unwrap();
        let (traced, trace) = forward_eval_trace(&params, &x).unwrap();
        assert_eq!(plain.data(), traced.data());
        assert_eq!(trace.xm.dims(), x.dims());
    }

    #[test]
    fn backward_shapes_line_up_for_every_module() {
        for kind in [ModuleKind::None, ModuleKind::Sa, ModuleKind::Ga] {
            let h = small(kind);
            let mut params = init_params(h, 5).unwrap();
            let x = rand_batch(4, h.c, h.t, 13);
            let (y, cache) = forward_train(x, &mut params).unwrap();
            let mut dy = Mat::zeros(y.rows(), y.cols());
            for v in dy.data_mut() {
                *v = 0.25;
            }
            let (dx, grads) = backward_train(&params, &cache, &dy, true).unwrap();
            assert_eq!(dx.unwrap().dims(), [4, 1, h.c, h.t]);
            assert_eq!(grads.proj_w.rows(), h.flatten_len());
            assert_eq!(grads.module.kind(), kind);
            let (dx_none, _) = backward_train(&params, &cache, &dy, false).unwrap();
            assert!(dx_none.is_none());
        }
    }

    #[test]
    fn input_shape_mismatch_is_rejected() {
        let h = small(ModuleKind::None);
        let mut params = init_params(h, 6).unwrap();
        let bad = Tensor4::zeros([2, 1, h.c + 1, h.t]);
        assert!(forward_train(bad, &mut params).is_err());
        let bad_eval = Tensor4::zeros([2, 1, h.c, h.t + 3]);
        assert!(forward_eval(&params, &bad_eval, 0).is_err());
    }
}
