//! Adam, the warmup / inverse-square-root schedule and global-norm clipping.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;
use crate::{Params, Scalar};

/// `init_lr · min(step / warmup, sqrt(warmup / step))` for `step ≥ 1`.
///
/// Rises linearly to `init_lr` at `step == warmup`, then decays as `1/sqrt(step)`.
pub fn lr_schedule(step: u64, init_lr: f64, warmup: u64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    init_lr * (step / warmup).min(num_traits::Float::sqrt(warmup / step))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moment buffers follow the parameters' visit order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Params<T>>(config: AdamConfig, params: &P) -> Self {
        let mut first = Vec::new();
        params.visit("", &mut |p| first.push(vec![T::zero(); p.data.len()]));
        let second = first.clone();
        Self {
            config,
            first,
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let bc1 = T::lit(1.0 - num_traits::Float::powi(beta1, t));
        let bc2 = T::lit(1.0 - num_traits::Float::powi(beta2, t));
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (one, lr, eps) = (T::one(), T::lit(lr), T::lit(eps));
        let first = &mut self.first;
        let second = &mut self.second;
        params.zip_mut(grads, &mut |i, p, g| {
            for (((w, &gv), m), v) in p.iter_mut().zip(g).zip(first[i].iter_mut()).zip(second[i].iter_mut()) {
                *m = b1 * *m + (one - b1) * gv;
                *v = b2 * *v + (one - b2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar, P: Params<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        grads.visit_mut(&mut |g| g.iter_mut().for_each(|v| *v *= s));
    }
    norm
}
