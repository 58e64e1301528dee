//! The EEG encoder: a temporal-then-spatial convolutional trunk with an
//! optional attention module over the electrode axis in front, projecting
//! each trial to a D-dimensional feature.
//!
//! Parameters are generic over the scalar type: training runs at f32,
//! gradient checking converts the same record to f64.

pub mod attention;
pub mod checkpoint;
pub mod tsconv;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::layers::BatchNormState;
use crate::numerics::{Mat, Scalar, Tensor4};

pub use attention::{
    ga_forward, module_backward, module_forward, sa_forward, GaCache, ModuleCache, SaCache,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use tsconv::{backward_eval, backward_train, forward_eval, forward_eval_trace, forward_train};
pub use tsconv::{EvalTrace, TrainCache};

/// Initial temperature: exp(log_t) = 1/0.07.
pub const INIT_EXP_T: f64 = 1.0 / 0.07;

/// Which spatial module sits in front of the convolutional trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModuleKind {
    #[default]
    None,
    Sa,
    Ga,
}

impl ModuleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModuleKind::None => "none",
            ModuleKind::Sa => "sa",
            ModuleKind::Ga => "ga",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ModuleKind::None),
            "sa" => Ok(ModuleKind::Sa),
            "ga" => Ok(ModuleKind::Ga),
            other => Err(Error::Argument(format!(
                "unknown spatial module '{other}' (expected none, sa, or ga)"
            ))),
        }
    }
}

impl std::fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture constants. `c`, `t`, `d` come from the data; the kernel and
/// pooling sizes default to the reference configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Electrode count.
    pub c: usize,
    /// Samples per epoch.
    pub t: usize,
    /// Output feature dimension.
    pub d: usize,
    /// Temporal/spatial map count.
    pub k: usize,
    /// Temporal kernel length.
    pub m1: usize,
    /// Pooling window.
    pub m2: usize,
    /// Pooling stride.
    pub s2: usize,
    pub module: ModuleKind,
    /// Add the attention mix back onto the input for GA (SA always does).
    pub ga_residual: bool,
}

impl HyperParams {
    pub const DEFAULT_K: usize = 40;
    pub const DEFAULT_M1: usize = 25;
    pub const DEFAULT_M2: usize = 51;
    pub const DEFAULT_S2: usize = 5;

    pub fn new(c: usize, t: usize, d: usize) -> Self {
        HyperParams {
            c,
            t,
            d,
            k: Self::DEFAULT_K,
            m1: Self::DEFAULT_M1,
            m2: Self::DEFAULT_M2,
            s2: Self::DEFAULT_S2,
            module: ModuleKind::None,
            ga_residual: true,
        }
    }

    pub fn with_module(mut self, module: ModuleKind) -> Self {
        self.module = module;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c", self.c),
            ("t", self.t),
            ("d", self.d),
            ("k", self.k),
            ("m1", self.m1),
            ("m2", self.m2),
            ("s2", self.s2),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("hyperparameter {name} must be >= 1")));
            }
        }
        if self.m1 > self.t {
            return Err(Error::Argument(format!(
                "temporal kernel m1={} exceeds epoch length t={}",
                self.m1, self.t
            )));
        }
        if self.m2 > self.t - self.m1 + 1 {
            return Err(Error::Argument(format!(
                "pooling window m2={} exceeds the convolved length {}",
                self.m2,
                self.t - self.m1 + 1
            )));
        }
        Ok(())
    }

    /// Length after the temporal convolution (valid, stride 1).
    pub fn conv_len(&self) -> usize {
        self.t - self.m1 + 1
    }

    /// Length after average pooling; a trailing partial window is dropped.
    pub fn l_pool(&self) -> usize {
        (self.conv_len() - self.m2) / self.s2 + 1
    }

    /// Width of the flattened feature fed to the projection head.
    pub fn flatten_len(&self) -> usize {
        self.k * self.l_pool()
    }
}

/// Self-attention maps; each is (T,T) and acts along the time axis of one
/// electrode row. The same struct doubles as the gradient record.
#[derive(Clone, Debug)]
pub struct SaParams<S> {
    pub wq: Mat<S>,
    pub wk: Mat<S>,
    pub wv: Mat<S>,
}

impl<S: Scalar> SaParams<S> {
    pub fn zeros(t: usize) -> Self {
        SaParams {
            wq: Mat::zeros(t, t),
            wk: Mat::zeros(t, t),
            wv: Mat::zeros(t, t),
        }
    }

    pub fn convert<T: Scalar>(&self) -> SaParams<T> {
        SaParams {
            wq: self.wq.convert(),
            wk: self.wk.convert(),
            wv: self.wv.convert(),
        }
    }
}

/// Graph-attention parameters: one shared (T,T) map and the 2T-interaction
/// vector split into source/target halves. Doubles as the gradient record.
#[derive(Clone, Debug)]
pub struct GaParams<S> {
    pub w: Mat<S>,
    pub a: Vec<S>,
}

impl<S: Scalar> GaParams<S> {
    pub fn zeros(t: usize) -> Self {
        GaParams {
            w: Mat::zeros(t, t),
            a: vec![S::zero(); 2 * t],
        }
    }

    pub fn convert<T: Scalar>(&self) -> GaParams<T> {
        GaParams {
            w: self.w.convert(),
            a: self.a.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Exactly one variant is active per encoder; `None` means the plain trunk.
#[derive(Clone, Debug)]
pub enum SpatialModule<S> {
    None,
    Sa(SaParams<S>),
    Ga(GaParams<S>),
}

impl<S: Scalar> SpatialModule<S> {
    pub fn kind(&self) -> ModuleKind {
        match self {
            SpatialModule::None => ModuleKind::None,
            SpatialModule::Sa(_) => ModuleKind::Sa,
            SpatialModule::Ga(_) => ModuleKind::Ga,
        }
    }

    pub fn convert<T: Scalar>(&self) -> SpatialModule<T> {
        match self {
            SpatialModule::None => SpatialModule::None,
            SpatialModule::Sa(p) => SpatialModule::Sa(p.convert()),
            SpatialModule::Ga(p) => SpatialModule::Ga(p.convert()),
        }
    }

    /// A zeroed record of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> SpatialModule<S> {
        match self {
            SpatialModule::None => SpatialModule::None,
            SpatialModule::Sa(p) => SpatialModule::Sa(SaParams::zeros(p.wq.rows())),
            SpatialModule::Ga(p) => SpatialModule::Ga(GaParams::zeros(p.w.rows())),
        }
    }
}

/// Full trainable state of the encoder plus the contrastive temperature.
///
/// The temperature is stored on log scale; the similarity multiplier is
/// `exp_t()`.
#[derive(Clone, Debug)]
pub struct EncoderParams<S: Scalar> {
    pub hyper: HyperParams,
    /// (k, 1, 1, m1)
    pub temporal_w: Tensor4<S>,
    pub temporal_b: Vec<S>,
    pub bn1: BatchNormState<S>,
    /// (k, k, C, 1)
    pub spatial_w: Tensor4<S>,
    pub spatial_b: Vec<S>,
    pub bn2: BatchNormState<S>,
    /// (k * l_pool, D)
    pub proj_w: Mat<S>,
    pub proj_b: Vec<S>,
    pub module: SpatialModule<S>,
    pub log_t: S,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn exp_t(&self) -> S {
        self.log_t.exp()
    }

    pub fn convert<T: Scalar>(&self) -> EncoderParams<T> {
        EncoderParams {
            hyper: self.hyper,
            temporal_w: self.temporal_w.convert(),
            temporal_b: self.temporal_b.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            bn1: self.bn1.convert(),
            spatial_w: self.spatial_w.convert(),
            spatial_b: self.spatial_b.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            bn2: self.bn2.convert(),
            proj_w: self.proj_w.convert(),
            proj_b: self.proj_b.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            module: self.module.convert(),
            log_t: T::from_f64(self.log_t.as_f64()),
        }
    }

    pub fn n_params(&self) -> usize {
        let module = match &self.module {
            SpatialModule::None => 0,
            SpatialModule::Sa(p) => 3 * p.wq.len(),
            SpatialModule::Ga(p) => p.w.len() + p.a.len(),
        };
        self.temporal_w.len()
            + self.temporal_b.len()
            + 2 * self.bn1.maps()
            + self.spatial_w.len()
            + self.spatial_b.len()
            + 2 * self.bn2.maps()
            + self.proj_w.len()
            + self.proj_b.len()
            + module
            + 1
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        h.validate()?;
        if self.temporal_w.dims() != [h.k, 1, 1, h.m1] || self.temporal_b.len() != h.k {
            return Err(Error::Dim(format!(
                "temporal stage shaped {:?}/{} does not match hyperparameters",
                self.temporal_w.dims(),
                self.temporal_b.len()
            )));
        }
        if self.spatial_w.dims() != [h.k, h.k, h.c, 1] || self.spatial_b.len() != h.k {
            return Err(Error::Dim(format!(
                "spatial stage shaped {:?}/{} does not match hyperparameters",
                self.spatial_w.dims(),
                self.spatial_b.len()
            )));
        }
        if self.bn1.maps() != h.k || self.bn2.maps() != h.k {
            return Err(Error::Dim(format!(
                "batch norm maps {}/{} do not match k={}",
                self.bn1.maps(),
                self.bn2.maps(),
                h.k
            )));
        }
        if self.proj_w.rows() != h.flatten_len()
            || self.proj_w.cols() != h.d
            || self.proj_b.len() != h.d
        {
            return Err(Error::Dim(format!(
                "projection shaped {}x{}/{} does not match flatten {} -> d {}",
                self.proj_w.rows(),
                self.proj_w.cols(),
                self.proj_b.len(),
                h.flatten_len(),
                h.d
            )));
        }
        if self.module.kind() != h.module {
            return Err(Error::Dim(format!(
                "module payload {} does not match configured {}",
                self.module.kind(),
                h.module
            )));
        }
        match &self.module {
            SpatialModule::None => {}
            SpatialModule::Sa(p) => {
                for (name, m) in [("wq", &p.wq), ("wk", &p.wk), ("wv", &p.wv)] {
                    if m.rows() != h.t || m.cols() != h.t {
                        return Err(Error::Dim(format!(
                            "sa {name} is {}x{}, expected {}x{}",
                            m.rows(),
                            m.cols(),
                            h.t,
                            h.t
                        )));
                    }
                }
            }
            SpatialModule::Ga(p) => {
                if p.w.rows() != h.t || p.w.cols() != h.t || p.a.len() != 2 * h.t {
                    return Err(Error::Dim(format!(
                        "ga shapes {}x{}/{} do not match t={}",
                        p.w.rows(),
                        p.w.cols(),
                        p.a.len(),
                        h.t
                    )));
                }
            }
        }
        if !self.log_t.is_finite() {
            return Err(Error::NonFinite("temperature log_t is not finite".into()));
        }
        Ok(())
    }
}

/// Gradients for every trainable slice of [`EncoderParams`]. Running
/// statistics are state, not parameters, and have no entry here.
#[derive(Clone, Debug)]
pub struct EncoderGrads<S: Scalar> {
    pub temporal_w: Tensor4<S>,
    pub temporal_b: Vec<S>,
    pub bn1_gamma: Vec<S>,
    pub bn1_beta: Vec<S>,
    pub spatial_w: Tensor4<S>,
    pub spatial_b: Vec<S>,
    pub bn2_gamma: Vec<S>,
    pub bn2_beta: Vec<S>,
    pub proj_w: Mat<S>,
    pub proj_b: Vec<S>,
    pub module: SpatialModule<S>,
    pub log_t: S,
}

impl<S: Scalar> EncoderGrads<S> {
    pub fn zeros_like(p: &EncoderParams<S>) -> Self {
        EncoderGrads {
            temporal_w: Tensor4::zeros(p.temporal_w.dims()),
            temporal_b: vec![S::zero(); p.temporal_b.len()],
            bn1_gamma: vec![S::zero(); p.bn1.maps()],
            bn1_beta: vec![S::zero(); p.bn1.maps()],
            spatial_w: Tensor4::zeros(p.spatial_w.dims()),
            spatial_b: vec![S::zero(); p.spatial_b.len()],
            bn2_gamma: vec![S::zero(); p.bn2.maps()],
            bn2_beta: vec![S::zero(); p.bn2.maps()],
            proj_w: Mat::zeros(p.proj_w.rows(), p.proj_w.cols()),
            proj_b: vec![S::zero(); p.proj_b.len()],
            module: p.module.zeros_like(),
            log_t: S::zero(),
        }
    }
}

/// Walks every (parameter slice, gradient slice) pair in a fixed order.
///
/// Optimizer state is keyed by position in this walk, so the order is part
/// of the training contract: temporal stage, bn1, spatial stage, bn2,
/// projection, attention module, temperature.
///
/// Panics if `grads` was built for a different module kind; gradients are
/// only ever produced by the matching backward pass.
pub fn visit_trainable<S: Scalar>(
    params: &mut EncoderParams<S>,
    grads: &EncoderGrads<S>,
    mut f: impl FnMut(&mut [S], &[S]),
) {
    f(params.temporal_w.data_mut(), grads.temporal_w.data());
    f(&mut params.temporal_b, &grads.temporal_b);
    f(&mut params.bn1.gamma, &grads.bn1_gamma);
    f(&mut params.bn1.beta, &grads.bn1_beta);
    f(params.spatial_w.data_mut(), grads.spatial_w.data());
    f(&mut params.spatial_b, &grads.spatial_b);
    f(&mut params.bn2.gamma, &grads.bn2_gamma);
    f(&mut params.bn2.beta, &grads.bn2_beta);
    f(params.proj_w.data_mut(), grads.proj_w.data());
    f(&mut params.proj_b, &grads.proj_b);
    match (&mut params.module, &grads.module) {
        (SpatialModule::None, SpatialModule::None) => {}
        (SpatialModule::Sa(p), SpatialModule::Sa(g)) => {
            f(p.wq.data_mut(), g.wq.data());
            f(p.wk.data_mut(), g.wk.data());
            f(p.wv.data_mut(), g.wv.data());
        }
        (SpatialModule::Ga(p), SpatialModule::Ga(g)) => {
            f(p.w.data_mut(), g.w.data());
            f(&mut p.a, &g.a);
        }
        (p, g) => panic!(
            "gradient module kind {} does not match parameter kind {}",
            g.kind(),
            p.kind()
        ),
    }
    f(
        std::slice::from_mut(&mut params.log_t),
        std::slice::from_ref(&grads.log_t),
    );
}

fn fill_uniform(rng: &mut ChaCha12Rng, fan_in: usize, out: &mut [f64]) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in out.iter_mut() {
        let u: f64 = rng.random();
        *v = bound * (2.0 * u - 1.0);
    }
}

/// Fresh parameters: weights and biases uniform in (-1/sqrt(fan_in),
/// +1/sqrt(fan_in)), batch norm at identity, exp(temperature) = 1/0.07.
/// The draw order is fixed, so a seed fully determines the result.
pub fn init_params(hyper: HyperParams, seed: u64) -> Result<EncoderParams<f64>> {
    hyper.validate()?;
    let h = hyper;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut temporal_w = Tensor4::zeros([h.k, 1, 1, h.m1]);
    fill_uniform(&mut rng, h.m1, temporal_w.data_mut());
    let mut temporal_b = vec![0.0; h.k];
    fill_uniform(&mut rng, h.m1, &mut temporal_b);

    let mut spatial_w = Tensor4::zeros([h.k, h.k, h.c, 1]);
    fill_uniform(&mut rng, h.k * h.c, spatial_w.data_mut());
    let mut spatial_b = vec![0.0; h.k];
    fill_uniform(&mut rng, h.k * h.c, &mut spatial_b);

    let mut proj_w = Mat::zeros(h.flatten_len(), h.d);
    fill_uniform(&mut rng, h.flatten_len(), proj_w.data_mut());
    let mut proj_b = vec![0.0; h.d];
    fill_uniform(&mut rng, h.flatten_len(), &mut proj_b);

    let module = match h.module {
        ModuleKind::None => SpatialModule::None,
        ModuleKind::Sa => {
            let mut p = SaParams::zeros(h.t);
            fill_uniform(&mut rng, h.t, p.wq.data_mut());
            fill_uniform(&mut rng, h.t, p.wk.data_mut());
            fill_uniform(&mut rng, h.t, p.wv.data_mut());
            SpatialModule::Sa(p)
        }
        ModuleKind::Ga => {
            let mut p = GaParams::zeros(h.t);
            fill_uniform(&mut rng, h.t, p.w.data_mut());
            fill_uniform(&mut rng, 2 * h.t, &mut p.a);
            SpatialModule::Ga(p)
        }
    };

    let params = EncoderParams {
        hyper: h,
        temporal_w,
        temporal_b,
        bn1: BatchNormState::new(h.k),
        spatial_w,
        spatial_b,
        bn2: BatchNormState::new(h.k),
        proj_w,
        proj_b,
        module,
        log_t: INIT_EXP_T.ln(),
    };
    params.validate()?;
    Ok(params)
}
