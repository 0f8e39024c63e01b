//! Gaussian point clouds: either free-form (synthetic ground truth) or
//! pixel-aligned, with one Gaussian per input pixel placed along its ray.

use crate::camera::RayBundle;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Whether a cloud may receive gradients. Guidance clouds come from the
/// clean-input branch and are consumed as constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudRole {
    Primary,
    Guidance,
}

/// Provenance of a pixel-aligned cloud. Gaussian `i` belongs to view
/// `i / (H·W)` and pixel `i % (H·W)` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLayout<T> {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    /// Euclidean depth along each pixel ray.
    pub depths: Vec<T>,
    /// Ray origin per view.
    pub origins: Vec<Vec3<T>>,
    /// Unit ray direction per Gaussian.
    pub directions: Vec<Vec3<T>>,
}

impl<T: Real> PixelLayout<T> {
    pub fn pixels_per_view(&self) -> usize {
        self.height * self.width
    }

    pub fn view_of(&self, i: usize) -> usize {
        i / self.pixels_per_view()
    }

    pub fn center(&self, i: usize) -> Vec3<T> {
        self.origins[self.view_of(i)] + self.directions[i] * self.depths[i]
    }

    pub fn from_rays(rays: &[RayBundle<T>], depths: Vec<T>) -> Result<Self> {
        let first = rays.first().ok_or_else(|| Error::Shape("no views".into()))?;
        let (h, w) = (first.height(), first.width());
        if rays.iter().any(|r| r.height() != h || r.width() != w) {
            return Err(Error::Shape("views differ in size".into()));
        }
        if depths.len() != rays.len() * h * w {
            return Err(Error::Shape(format!("{} depths for {} pixels", depths.len(), rays.len() * h * w)));
        }
        let origins = rays.iter().map(|r| r.origin(0, 0)).collect();
        let mut directions = Vec::with_capacity(depths.len());
        for r in rays {
            for y in 0..h {
                for x in 0..w {
                    directions.push(r.direction(y, x));
                }
            }
        }
        Ok(Self { views: rays.len(), height: h, width: w, depths, origins, directions })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    pub means: Vec<Vec3<T>>,
    /// Per-axis standard deviations, world units.
    pub scales: Vec<Vec3<T>>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<[T; 4]>,
    pub opacities: Vec<T>,
    /// sRGB colors in `[0, 1]`.
    pub colors: Vec<Vec3<T>>,
    pub layout: Option<PixelLayout<T>>,
    pub role: CloudRole,
}

impl<T: Real> GaussianCloud<T> {
    pub fn empty() -> Self {
        Self {
            means: Vec::new(),
            scales: Vec::new(),
            rotations: Vec::new(),
            opacities: Vec::new(),
            colors: Vec::new(),
            layout: None,
            role: CloudRole::Primary,
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, mean: Vec3<T>, scale: Vec3<T>, rotation: [T; 4], opacity: T, color: Vec3<T>) {
        self.means.push(mean);
        self.scales.push(scale);
        self.rotations.push(rotation);
        self.opacities.push(opacity);
        self.colors.push(color);
    }

    pub fn depths(&self) -> Option<&[T]> {
        self.layout.as_ref().map(|l| l.depths.as_slice())
    }

    /// Attribute arrays agree in length and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.scales.len() != n || self.rotations.len() != n || self.opacities.len() != n || self.colors.len() != n {
            return Err(Error::Shape("cloud attribute arrays differ in length".into()));
        }
        for i in 0..n {
            let finite = self.means[i].is_finite()
                && self.scales[i].is_finite()
                && self.rotations[i].iter().all(|v| v.is_finite())
                && self.opacities[i].is_finite()
                && self.colors[i].is_finite();
            if !finite {
                return Err(Error::NonFinite(format!("Gaussian {i} has non-finite attributes")));
            }
        }
        if let Some(l) = &self.layout {
            if l.depths.len() != n || l.directions.len() != n || l.views * l.pixels_per_view() != n || l.origins.len() != l.views {
                return Err(Error::Shape("pixel layout does not match cloud size".into()));
            }
        }
        Ok(())
    }

    /// Checks the ranges a predicted pixel-aligned cloud guarantees.
    pub fn check_prediction_invariants(&self, near: f64, far: f64, scale_range: [f64; 2]) -> Result<()> {
        self.validate()?;
        let layout = self.layout.as_ref().ok_or_else(|| Error::Invariant("cloud is not pixel-aligned".into()))?;
        let tol = 1e-6f64.max(10.0 * T::epsilon().to64());
        for i in 0..self.len() {
            let d = layout.depths[i].to64();
            if !(d >= near && d <= far) {
                return Err(Error::Invariant(format!("depth {d} outside [{near}, {far}]")));
            }
            let qn = self.rotations[i].iter().map(|v| v.to64() * v.to64()).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > tol {
                return Err(Error::Invariant(format!("quaternion norm {qn}")));
            }
            let a = self.opacities[i].to64();
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Invariant(format!("opacity {a}")));
            }
            for c in 0..3 {
                let s = self.scales[i][c].to64();
                if s < scale_range[0] * (1.0 - tol) || s > scale_range[1] * (1.0 + tol) {
                    return Err(Error::Invariant(format!("scale {s} outside {scale_range:?}")));
                }
                let col = self.colors[i][c].to64();
                if !(0.0..=1.0).contains(&col) {
                    return Err(Error::Invariant(format!("color {col}")));
                }
            }
            let mu = layout.center(i);
            if (mu - self.means[i]).norm().to64() > tol * (1.0 + mu.norm().to64()) {
                return Err(Error::Invariant(format!("center of Gaussian {i} is off its ray")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let v = |p: &Vec3<T>| Vec3::from_f64(p.to_f64());
        GaussianCloud {
            means: self.means.iter().map(v).collect(),
            scales: self.scales.iter().map(v).collect(),
            rotations: self.rotations.iter().map(|q| q.map(|x| U::of(x.to64()))).collect(),
            opacities: self.opacities.iter().map(|a| U::of(a.to64())).collect(),
            colors: self.colors.iter().map(v).collect(),
            layout: self.layout.as_ref().map(|l| PixelLayout {
                views: l.views,
                height: l.height,
                width: l.width,
                depths: l.depths.iter().map(|d| U::of(d.to64())).collect(),
                origins: l.origins.iter().map(v).collect(),
                directions: l.directions.iter().map(v).collect(),
            }),
            role: self.role,
        }
    }
}

/// Gradient of a scalar with respect to every cloud attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGrad<T> {
    pub means: Vec<Vec3<T>>,
    pub scales: Vec<Vec3<T>>,
    pub rotations: Vec<[T; 4]>,
    pub opacities: Vec<T>,
    pub colors: Vec<Vec3<T>>,
}

impl<T: Real> CloudGrad<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![Vec3::zero(); n],
            scales: vec![Vec3::zero(); n],
            rotations: vec![[T::zero(); 4]; n],
            opacities: vec![T::zero(); n],
            colors: vec![Vec3::zero(); n],
        }
    }

    /// Chain rule through `μ = o + depth · d`.
    pub fn depth_grads(&self, layout: &PixelLayout<T>) -> Vec<T> {
        self.means.iter().zip(&layout.directions).map(|(g, d)| g.dot(*d)).collect()
    }
}
