//! Adam over the encoder's trainable blocks.

use crate::encoders::{visit_trainable, EncoderGrads, EncoderParams};
use crate::numerics::Scalar;

pub const DEFAULT_LR: f64 = 2e-4;
pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam state. Moment buffers are keyed by block position in the encoder's
/// fixed visitation order, so one optimizer must stay with one architecture.
pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    steps: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr: S::from_f64(lr),
            beta1: S::from_f64(DEFAULT_BETA1),
            beta2: S::from_f64(DEFAULT_BETA2),
            eps: S::from_f64(ADAM_EPS),
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update of every trainable block in place.
    pub fn step(&mut self, params: &mut EncoderParams<S>, grads: &EncoderGrads<S>) {
        self.steps += 1;
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let c1 = S::from_f64(1.0 - DEFAULT_BETA1.powi(self.steps as i32));
        let c2 = S::from_f64(1.0 - DEFAULT_BETA2.powi(self.steps as i32));
        let one = S::one();
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut slot = 0usize;
        visit_trainable(params, grads, |p, g| {
            if ms.len() == slot {
                ms.push(vec![S::zero(); p.len()]);
                vs.push(vec![S::zero(); p.len()]);
            }
            let (m, v) = (&mut ms[slot], &mut vs[slot]);
            assert_eq!(m.len(), p.len(), "parameter block {slot} changed size");
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_params, HyperParams, ModuleKind};

    fn small() -> HyperParams {
        HyperParams {
            k: 3,
            m1: 5,
            m2: 7,
            s2: 3,
            ..HyperParams::new(4, 30, 6).with_module(ModuleKind::Ga)
        }
    }

    fn constant_grads(params: &EncoderParams<f64>, g: f64) -> EncoderGrads<f64> {
        let mut grads = EncoderGrads::zeros_like(params);
        grads.temporal_w.data_mut().fill(g);
        grads.temporal_b.fill(g);
        grads.bn1_gamma.fill(g);
        grads.bn1_beta.fill(g);
        grads.spatial_w.data_mut().fill(g);
        grads.spatial_b.fill(g);
        grads.bn2_gamma.fill(g);
        grads.bn2_beta.fill(g);
        grads.proj_w.data_mut().fill(g);
        grads.proj_b.fill(g);
        if let crate::encoders::SpatialModule::Ga(m) = &mut grads.module {
            m.w.data_mut().fill(g);
            m.a.fill(g);
        }
        grads.log_t = g;
        grads
    }

    #[test]
    fn first_step_is_a_signed_lr_move() {
        let mut params = init_params(small(), 1).unwrap();
        let before = params.clone();
        let grads = constant_grads(&params, 0.5);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut params, &grads);
        // mhat = g, vhat = g^2 -> update = -lr * g / (|g| + eps) ~ -lr
        let want = before.log_t - 1e-3 * 0.5 / (0.5 + ADAM_EPS);
        assert!((params.log_t - want).abs() < 1e-12);
        for (a, b) in params.proj_w.data().iter().zip(before.proj_w.data()) {
            assert!((a - (b - 1e-3 * 0.5 / (0.5 + ADAM_EPS))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradients_do_not_move_parameters() {
        let mut params = init_params(small(), 2).unwrap();
        let before = params.clone();
        let grads = EncoderGrads::zeros_like(&params);
        let mut adam = Adam::new(1e-2);
        adam.step(&mut params, &grads);
        adam.step(&mut params, &grads);
        assert_eq!(params.log_t, before.log_t);
        assert_eq!(params.proj_w.data(), before.proj_w.data());
        assert_eq!(params.temporal_b, before.temporal_b);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn opposite_gradients_cancel_over_two_steps_directionally() {
        let mut params = init_params(small(), 3).unwrap();
        let before = params.log_t;
        let up = constant_grads(&params, 1.0);
        let down = constant_grads(&params, -1.0);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut params, &up);
        let after_up = params.log_t;
        adam.step(&mut params, &down);
        assert!(after_up < before);
        assert!(params.log_t > after_up);
    }
}
