//! Self-consistency between the depths of the noisy-input cloud and a
//! guidance cloud predicted by the same model from clean inputs.

use crate::cloud::{CloudRole, GaussianCloud};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gradients of the self-consistency loss. Guidance depths are behind a stop
/// gradient, so their gradient is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GscGrad<T> {
    pub noisy_depths: Vec<T>,
    pub guidance_depths: Vec<T>,
}

fn aligned_depths<'a, T: Real>(noisy: &'a GaussianCloud<T>, guidance: &'a GaussianCloud<T>) -> Result<(&'a [T], &'a [T])> {
    if noisy.role != CloudRole::Primary {
        return Err(Error::Contract("the noisy-branch argument must be a primary cloud".into()));
    }
    if guidance.role != CloudRole::Guidance {
        return Err(Error::Contract("the guidance argument must come from the clean branch".into()));
    }
    let (Some(a), Some(b)) = (noisy.layout.as_ref(), guidance.layout.as_ref()) else {
        return Err(Error::Alignment("both clouds must be pixel-aligned".into()));
    };
    if (a.views, a.height, a.width) != (b.views, b.height, b.width) || a.depths.len() != b.depths.len() {
        return Err(Error::Alignment(format!(
            "{}x{}x{} vs {}x{}x{} Gaussians",
            a.views, a.height, a.width, b.views, b.height, b.width
        )));
    }
    if a.depths.is_empty() {
        return Err(Error::Alignment("empty clouds".into()));
    }
    Ok((&a.depths, &b.depths))
}

/// `(1/|P|) Σ_p (d_p − sg(d̂_p))²`.
pub fn gsc_loss<T: Real>(noisy: &GaussianCloud<T>, guidance: &GaussianCloud<T>) -> Result<T> {
    let (d, g) = aligned_depths(noisy, guidance)?;
    let n = T::of(d.len() as f64);
    Ok(d.iter().zip(g).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n)
}

pub fn gsc_loss_grad<T: Real>(noisy: &GaussianCloud<T>, guidance: &GaussianCloud<T>) -> Result<(T, GscGrad<T>)> {
    let (d, g) = aligned_depths(noisy, guidance)?;
    let n = T::of(d.len() as f64);
    let loss = d.iter().zip(g).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n;
    let two = T::of(2.0);
    let noisy_depths = d.iter().zip(g).map(|(a, b)| two * (*a - *b) / n).collect();
    Ok((loss, GscGrad { noisy_depths, guidance_depths: vec![T::zero(); g.len()] }))
}
