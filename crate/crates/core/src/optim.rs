//! Adam with bias correction, global-norm clipping and a warm-up plus cosine
//! learning-rate schedule.

use crate::config::OptimConfig;
use crate::model::Weights;
use crate::scalar::Real;

/// Linear warm-up to `lr`, then cosine decay to `lr · min_lr_ratio` at
/// `total_iters`.
pub fn learning_rate(cfg: &OptimConfig, iter: u64, total_iters: u64) -> f64 {
    if iter < cfg.lr_warmup_iters {
        return cfg.lr * (iter + 1) as f64 / cfg.lr_warmup_iters as f64;
    }
    let span = total_iters.saturating_sub(cfg.lr_warmup_iters).max(1) as f64;
    let p = ((iter - cfg.lr_warmup_iters) as f64 / span).min(1.0);
    let floor = cfg.min_lr_ratio;
    cfg.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub m: Weights<T>,
    pub v: Weights<T>,
    pub step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(like: &Weights<T>) -> Self {
        Self { m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    /// Scales `grads` in place so their global norm is at most `clip` and
    /// returns the norm before clipping.
    pub fn clip(grads: &mut Weights<T>, clip: f64) -> f64 {
        let norm = grads.sq_norm().sqrt();
        if clip > 0.0 && norm > clip {
            grads.scale(T::of(clip / norm));
        }
        norm
    }

    pub fn update(&mut self, weights: &mut Weights<T>, grads: &Weights<T>, cfg: &OptimConfig, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = T::of(1.0 / (1.0 - b1.powi(t)));
        let c2 = T::of(1.0 / (1.0 - b2.powi(t)));
        let (b1, b2) = (T::of(b1), T::of(b2));
        let (lr, eps, wd) = (T::of(lr), T::of(cfg.eps), T::of(cfg.weight_decay));
        let grads: Vec<&[T]> = grads.tensors().into_iter().map(|t| t.2).collect();
        let params = weights.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let step = (m[i] * c1) / ((v[i] * c2).sqrt() + eps) + wd * p[i];
                p[i] -= lr * step;
            }
        }
    }
}
