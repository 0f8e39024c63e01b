//! Training objectives and their gradients.

pub mod frequency;
pub mod gsc;
pub mod perceptual;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

pub use frequency::{dft2, lwf_loss, lwf_loss_grad, lwf_loss_weighted, lwf_weights};
pub use gsc::{gsc_loss, gsc_loss_grad, GscGrad};
pub use perceptual::{perceptual_loss, perceptual_loss_grad, FeatureExtractor, GradientPyramid};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mse: f64,
    pub lpips: f64,
    pub gsc: f64,
    pub freq: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 1.0, lpips: 0.5, gsc: 0.06, freq: 1.75 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mse", self.mse), ("lpips", self.lpips), ("gsc", self.gsc), ("freq", self.freq)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub perceptual: f64,
    pub gsc: f64,
    pub lwf: f64,
    pub total: f64,
    pub gsc_active: bool,
}

impl LossReport {
    /// Weighted sum; the self-consistency term only counts while active.
    pub fn combine(mse: f64, perceptual: f64, gsc: f64, lwf: f64, weights: &LossWeights, gsc_active: bool) -> Self {
        let total = weights.mse * mse + weights.lpips * perceptual + if gsc_active { weights.gsc * gsc } else { 0.0 } + weights.freq * lwf;
        Self { mse, perceptual, gsc, lwf, total, gsc_active }
    }

    pub fn is_finite(&self) -> bool {
        [self.mse, self.perceptual, self.gsc, self.lwf, self.total].iter().all(|v| v.is_finite())
    }
}

fn check_same<T: Real>(pred: &ArrayView3<T>, gt: &ArrayView3<T>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

pub fn mse_loss<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<T> {
    check_same(&pred, &gt)?;
    if pred.is_empty() {
        return Ok(T::zero());
    }
    let n = T::of(pred.len() as f64);
    Ok(pred.iter().zip(gt.iter()).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n)
}

pub fn mse_loss_grad<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<(T, Array3<T>)> {
    let loss = mse_loss(pred, gt)?;
    let k = T::of(2.0 / pred.len().max(1) as f64);
    let mut g = pred.to_owned();
    g.zip_mut_with(&gt, |a, b| *a = (*a - *b) * k);
    Ok((loss, g))
}

/// Every loss term for one rendered target. `guidance` must be supplied
/// whenever `gsc_active` is set; when present but inactive the term is
/// reported and left out of the total.
pub fn total_loss<T: Real>(
    pred: ArrayView3<T>,
    gt: ArrayView3<T>,
    noisy_cloud: &GaussianCloud<T>,
    guidance: Option<&GaussianCloud<T>>,
    weights: &LossWeights,
    gsc_active: bool,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossReport> {
    total_loss_grad(pred, gt, noisy_cloud, guidance, weights, gsc_active, extractor, false).map(|t| t.report)
}

#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    pub report: LossReport,
    /// Weighted gradient with respect to the rendered image.
    pub image: Option<Array3<T>>,
    /// Weighted gradient with respect to the noisy-branch depths; `None`
    /// while the self-consistency term is inactive.
    pub depths: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn total_loss_grad<T: Real>(
    pred: ArrayView3<T>,
    gt: ArrayView3<T>,
    noisy_cloud: &GaussianCloud<T>,
    guidance: Option<&GaussianCloud<T>>,
    weights: &LossWeights,
    gsc_active: bool,
    extractor: &dyn FeatureExtractor<T>,
    with_grad: bool,
) -> Result<LossGrad<T>> {
    weights.validate()?;
    if gsc_active && guidance.is_none() {
        return Err(Error::Contract("self-consistency is active but no guidance cloud was given".into()));
    }
    check_same(&pred, &gt)?;
    let (mse, g_mse) = mse_loss_grad(pred, gt)?;
    let (perc, g_perc) = perceptual_loss_grad(pred, gt, extractor, with_grad && weights.lpips > 0.0)?;
    let (lwf, g_lwf) = if with_grad && weights.freq > 0.0 {
        let (l, g) = lwf_loss_grad(pred, gt)?;
        (l, Some(g))
    } else {
        (lwf_loss(pred, gt)?, None)
    };
    let (gsc, g_gsc) = match guidance {
        Some(g) => {
            let (l, gg) = gsc_loss_grad(noisy_cloud, g)?;
            (l.to64(), Some(gg.noisy_depths))
        }
        None => (0.0, None),
    };
    let report = LossReport::combine(mse.to64(), perc.to64(), gsc, lwf.to64(), weights, gsc_active);
    if !with_grad {
        return Ok(LossGrad { report, image: None, depths: None });
    }
    let mut image = g_mse * T::of(weights.mse);
    if let Some(g) = g_perc {
        image.scaled_add(T::of(weights.lpips), &g);
    }
    if let Some(g) = g_lwf {
        image.scaled_add(T::of(weights.freq), &g);
    }
    let depths = match (gsc_active && weights.gsc > 0.0, g_gsc) {
        (true, Some(g)) => {
            let k = T::of(weights.gsc);
            Some(g.into_iter().map(|v| v * k).collect())
        }
        _ => None,
    };
    Ok(LossGrad { report, image: Some(image), depths })
}
