//! Synthetic sensor noise: the heteroscedastic Gaussian read/shot model, the
//! gain-level mapping, the training noise window and the gamma/white-balance
//! linearization used to move between sRGB and linear intensities.

use ndarray::{Array3, ArrayView3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Display gamma of the power-law transfer curve.
pub const GAMMA: f64 = 2.2;

/// Read/shot noise standard deviations of one capture setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Read noise standard deviation, linear intensity units.
    pub sigma_r: f64,
    /// Shot noise coefficient; the shot variance is `sigma_s² · I`.
    pub sigma_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

impl NoiseParams {
    pub fn new(sigma_r: f64, sigma_s: f64) -> Result<Self> {
        let p = Self { sigma_r, sigma_s, gain: None };
        p.validate()?;
        Ok(p)
    }

    pub fn zero() -> Self {
        Self { sigma_r: 0.0, sigma_s: 0.0, gain: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r >= 0.0) || !(self.sigma_s >= 0.0) || !self.sigma_max().is_finite() {
            return Err(Error::Domain(format!(
                "noise parameters must be finite and non-negative (sigma_r={}, sigma_s={})",
                self.sigma_r, self.sigma_s
            )));
        }
        if let Some(g) = self.gain {
            if !(g > 0.0) {
                return Err(Error::Domain(format!("gain must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// `sqrt(sigma_r² + sigma_s²)`, the standard deviation at full intensity.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_r.hypot(self.sigma_s)
    }

    /// Per-pixel variance at linear intensity `clean`.
    pub fn variance(&self, clean: f64) -> f64 {
        self.sigma_r * self.sigma_r + self.sigma_s * self.sigma_s * clean
    }
}

/// Axis-aligned rectangle in `(log10 sigma_r, log10 sigma_s)` from which
/// training noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseWindow {
    pub log10_sigma_r: [f64; 2],
    pub log10_sigma_s: [f64; 2],
}

impl NoiseWindow {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("log10_sigma_r", self.log10_sigma_r), ("log10_sigma_s", self.log10_sigma_s)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Domain(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }
}

impl Default for NoiseWindow {
    /// Covers the evaluation gains 1 to 20 of the default [`GainCurve`].
    fn default() -> Self {
        Self { log10_sigma_r: [-2.2, -0.9], log10_sigma_s: [-2.6, -1.3] }
    }
}

/// Straight line in log-log space anchored at gain 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub sigma_r_1: f64,
    pub sigma_s_1: f64,
    #[serde(default = "one")]
    pub slope_r: f64,
    #[serde(default = "one")]
    pub slope_s: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GainCurve {
    /// Placeholder anchors; these are configuration, not measured sensor values.
    fn default() -> Self {
        Self { sigma_r_1: 10f64.powf(-2.2), sigma_s_1: 10f64.powf(-2.6), slope_r: 1.0, slope_s: 1.0 }
    }
}

impl GainCurve {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r_1 > 0.0) || !(self.sigma_s_1 > 0.0) {
            return Err(Error::Domain("gain curve anchors must be positive".into()));
        }
        if !self.slope_r.is_finite() || !self.slope_s.is_finite() {
            return Err(Error::Domain("gain curve slopes must be finite".into()));
        }
        Ok(())
    }
}

pub fn gain_to_sigmas(curve: &GainCurve, gain: f64) -> Result<NoiseParams> {
    curve.validate()?;
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::Domain(format!("gain must be positive, got {gain}")));
    }
    let p = NoiseParams {
        sigma_r: curve.sigma_r_1 * gain.powf(curve.slope_r),
        sigma_s: curve.sigma_s_1 * gain.powf(curve.slope_s),
        gain: Some(gain),
    };
    p.validate()?;
    Ok(p)
}

/// Draws `I_n ~ N(I_c, sigma_r² + sigma_s² I_c)` independently per element.
/// The result is not clipped unless `clip` is set.
pub fn apply_noise<T: Real>(clean: ArrayView3<T>, params: &NoiseParams, seed: u64, clip: bool) -> Result<Array3<T>> {
    params.validate()?;
    if let Some(bad) = clean.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Domain(format!("clean linear intensity {bad} outside [0, 1]")));
    }
    let mut rng = rng::stream(seed, &[rng::tag::NOISE]);
    let r2 = params.sigma_r * params.sigma_r;
    let s2 = params.sigma_s * params.sigma_s;
    let mut out = Array3::zeros(clean.raw_dim());
    for (o, &c) in out.iter_mut().zip(clean.iter()) {
        let z: f64 = rng.sample(StandardNormal);
        let c64 = c.to64();
        let mut v = c64 + (r2 + s2 * c64).sqrt() * z;
        if clip {
            v = v.clamp(0.0, 1.0);
        }
        *o = T::of(v);
    }
    Ok(out)
}

/// Uniform draw over the window in log10 space.
pub fn sample_train_noise(window: &NoiseWindow, seed: u64) -> Result<NoiseParams> {
    window.validate()?;
    let mut rng = rng::stream(seed, &[rng::tag::TRAIN_NOISE]);
    let mut draw = |[lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let lr = draw(window.log10_sigma_r);
    let ls = draw(window.log10_sigma_s);
    NoiseParams::new(10f64.powf(lr), 10f64.powf(ls))
}

fn check_wb(wb: [f64; 3]) -> Result<()> {
    if wb.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::Domain(format!("white balance gains must be positive, got {wb:?}")));
    }
    Ok(())
}

/// sRGB in `[0, 1]` to linear intensity: `x^2.2` per channel, then divided by
/// the channel's white-balance gain.
pub fn linearize<T: Real>(srgb: ArrayView3<T>, wb_gains: [f64; 3]) -> Result<Array3<T>> {
    check_wb(wb_gains)?;
    if srgb.shape()[2] != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", srgb.shape()[2])));
    }
    if let Some(bad) = srgb.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::Domain(format!("sRGB value {bad} outside [0, 1]")));
    }
    let gamma = T::of(GAMMA);
    let mut out = srgb.to_owned();
    for c in 0..3 {
        let g = T::of(wb_gains[c]);
        out.index_axis_mut(ndarray::Axis(2), c).mapv_inplace(|x| x.powf(gamma) / g);
    }
    Ok(out)
}

/// Inverse of [`linearize`]: multiply by the gains, clamp below at 0, apply
/// `x^(1/2.2)` and clamp to `[0, 1]`.
pub fn delinearize<T: Real>(linear: ArrayView3<T>, wb_gains: [f64; 3]) -> Result<Array3<T>> {
    check_wb(wb_gains)?;
    if linear.shape()[2] != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {}", linear.shape()[2])));
    }
    let inv_gamma = T::of(1.0 / GAMMA);
    let mut out = Array3::zeros(linear.raw_dim());
    for c in 0..3 {
        let g = T::of(wb_gains[c]);
        Zip::from(out.index_axis_mut(ndarray::Axis(2), c))
            .and(linear.index_axis(ndarray::Axis(2), c))
            .for_each(|o, &x| {
                let v = (x * g).max(T::zero());
                *o = v.powf(inv_gamma).min(T::one());
            });
    }
    Ok(out)
}
