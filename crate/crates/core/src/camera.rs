//! Pinhole cameras, per-pixel rays and the two ray encodings fed to the
//! network alongside the images.
//!
//! Conventions: OpenCV camera frame (x right, y down, z forward), pixel
//! centers at `(u + 0.5, v + 0.5)`, poses stored camera-to-world. Ray
//! directions are unit vectors, so the depth along a ray is Euclidean.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<T> {
    /// Pixel-unit intrinsics `[[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`.
    pub intrinsics: Mat3<T>,
    /// Camera-to-world rotation.
    pub rotation: Mat3<T>,
    /// Camera center in world coordinates.
    pub translation: Vec3<T>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraView<T> {
    pub fn from_pinhole(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        rotation: Mat3<T>,
        translation: Vec3<T>,
        width: usize,
        height: usize,
    ) -> Self {
        let (z, o) = (T::zero(), T::one());
        Self {
            intrinsics: Mat3::new([[fx, z, cx], [z, fy, cy], [z, z, o]]),
            rotation,
            translation,
            width,
            height,
        }
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn with_fov(fov_x_deg: f64, width: usize, height: usize, rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::from_pinhole(
            T::of(f),
            T::of(f),
            T::of(0.5 * width as f64),
            T::of(0.5 * height as f64),
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn fx(&self) -> T {
        self.intrinsics.m[0][0]
    }
    pub fn fy(&self) -> T {
        self.intrinsics.m[1][1]
    }
    pub fn cx(&self) -> T {
        self.intrinsics.m[0][2]
    }
    pub fn cy(&self) -> T {
        self.intrinsics.m[1][2]
    }

    pub fn center(&self) -> Vec3<T> {
        self.translation
    }

    /// World-to-camera rotation.
    pub fn world_to_camera_rotation(&self) -> Mat3<T> {
        self.rotation.transpose()
    }

    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    pub fn translated(&self, t: Vec3<T>) -> Self {
        Self { translation: self.translation + t, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!("image size {}x{}", self.width, self.height)));
        }
        if !self.intrinsics.is_finite() || !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::InvalidCamera("non-finite parameters".into()));
        }
        let k = &self.intrinsics.m;
        if k[0][1] != T::zero() || k[1][0] != T::zero() || k[2][0] != T::zero() || k[2][1] != T::zero() || k[2][2] != T::one() {
            return Err(Error::InvalidCamera("intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into()));
        }
        if self.intrinsics.inverse().is_none() || self.fx() <= T::zero() || self.fy() <= T::zero() {
            return Err(Error::InvalidCamera(format!(
                "non-invertible intrinsics (fx={}, fy={})",
                self.fx(),
                self.fy()
            )));
        }
        let (w, h) = (T::of(self.width as f64), T::of(self.height as f64));
        if self.cx() < T::zero() || self.cx() > w || self.cy() < T::zero() || self.cy() > h {
            return Err(Error::InvalidCamera(format!("principal point ({}, {}) outside the image", self.cx(), self.cy())));
        }
        let rrt = self.rotation.mul_mat(&self.rotation.transpose());
        let tol = ROTATION_TOL.max(100.0 * T::epsilon().to64());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                if (rrt.m[i][j].to64() - e).abs() > tol {
                    return Err(Error::InvalidCamera("rotation is not orthonormal".into()));
                }
            }
        }
        if (self.rotation.det().to64() - 1.0).abs() > tol {
            return Err(Error::InvalidCamera("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> CameraView<U> {
        CameraView {
            intrinsics: Mat3::from_f64(self.intrinsics.to_f64()),
            rotation: Mat3::from_f64(self.rotation.to_f64()),
            translation: Vec3::from_f64(self.translation.to_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Camera-to-world rotation looking from `eye` towards `target`; `up` is the
/// approximate world direction that should appear upwards in the image.
pub fn look_at<T: Real>(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Mat3<T> {
    let forward = (target - eye).normalized();
    let right = forward.cross(up).normalized();
    let down = forward.cross(right);
    Mat3::from_columns(right, down, forward)
}

/// Per-pixel rays of one view, `H×W×3` each.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle<T> {
    pub origins: Array3<T>,
    pub directions: Array3<T>,
}

impl<T: Real> RayBundle<T> {
    pub fn height(&self) -> usize {
        self.origins.shape()[0]
    }
    pub fn width(&self) -> usize {
        self.origins.shape()[1]
    }

    #[inline]
    pub fn origin(&self, y: usize, x: usize) -> Vec3<T> {
        Vec3::new(self.origins[[y, x, 0]], self.origins[[y, x, 1]], self.origins[[y, x, 2]])
    }

    #[inline]
    pub fn direction(&self, y: usize, x: usize) -> Vec3<T> {
        Vec3::new(self.directions[[y, x, 0]], self.directions[[y, x, 1]], self.directions[[y, x, 2]])
    }

    /// Builds a bundle from explicit rays; directions are normalized.
    pub fn from_rays(height: usize, width: usize, rays: &[(Vec3<T>, Vec3<T>)]) -> Result<Self> {
        if rays.len() != height * width {
            return Err(Error::Shape(format!("{} rays for a {height}x{width} bundle", rays.len())));
        }
        let mut origins = Array3::zeros((height, width, 3));
        let mut directions = Array3::zeros((height, width, 3));
        for (i, (o, d)) in rays.iter().enumerate() {
            let (y, x) = (i / width, i % width);
            let d = d.normalized();
            for c in 0..3 {
                origins[[y, x, c]] = o[c];
                directions[[y, x, c]] = d[c];
            }
        }
        Ok(Self { origins, directions })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Plucker,
    Rppc,
}

/// Six channels per pixel: a 3-vector describing the ray's position followed
/// by its unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RayEncoding<T> {
    pub channels: Array3<T>,
    pub kind: EncodingKind,
}

pub fn rays_for_view<T: Real>(view: &CameraView<T>) -> Result<RayBundle<T>> {
    view.validate()?;
    let kinv = view
        .intrinsics
        .inverse()
        .ok_or_else(|| Error::InvalidCamera("non-invertible intrinsics".into()))?;
    let (h, w) = (view.height, view.width);
    let mut origins = Array3::zeros((h, w, 3));
    let mut directions = Array3::zeros((h, w, 3));
    let half = T::of(0.5);
    let o = view.translation;
    for v in 0..h {
        for u in 0..w {
            let pix = Vec3::new(T::of(u as f64) + half, T::of(v as f64) + half, T::one());
            let d = view.rotation.mul_vec(kinv.mul_vec(pix)).normalized();
            for c in 0..3 {
                origins[[v, u, c]] = o[c];
                directions[[v, u, c]] = d[c];
            }
        }
    }
    Ok(RayBundle { origins, directions })
}

fn encode_with<T: Real>(rays: &RayBundle<T>, kind: EncodingKind, f: impl Fn(Vec3<T>, Vec3<T>) -> Vec3<T>) -> RayEncoding<T> {
    let (h, w) = (rays.height(), rays.width());
    let mut channels = Array3::zeros((h, w, 6));
    for y in 0..h {
        for x in 0..w {
            let (o, d) = (rays.origin(y, x), rays.direction(y, x));
            let r = f(o, d);
            for c in 0..3 {
                channels[[y, x, c]] = r[c];
                channels[[y, x, 3 + c]] = d[c];
            }
        }
    }
    RayEncoding { channels, kind }
}

/// Plücker coordinates `(o × d, d)`.
pub fn plucker_encode<T: Real>(rays: &RayBundle<T>) -> RayEncoding<T> {
    encode_with(rays, EncodingKind::Plucker, |o, d| o.cross(d))
}

/// Reference-point Plücker coordinates `(o − (o·d)d, d)`: the point of the
/// ray closest to the world origin, then the direction.
pub fn rppc_encode<T: Real>(rays: &RayBundle<T>) -> RayEncoding<T> {
    encode_with(rays, EncodingKind::Rppc, |o, d| o - d * o.dot(d))
}

pub fn encode<T: Real>(rays: &RayBundle<T>, kind: EncodingKind) -> RayEncoding<T> {
    match kind {
        EncodingKind::Plucker => plucker_encode(rays),
        EncodingKind::Rppc => rppc_encode(rays),
    }
}

/// Point of the encoded line closest to the world origin, recovered from
/// either encoding (for Plücker: `d × m` with `m = o × d`).
pub fn closest_point_to_origin<T: Real>(enc: &RayEncoding<T>, y: usize, x: usize) -> Vec3<T> {
    let c = &enc.channels;
    let r = Vec3::new(c[[y, x, 0]], c[[y, x, 1]], c[[y, x, 2]]);
    let d = Vec3::new(c[[y, x, 3]], c[[y, x, 4]], c[[y, x, 5]]);
    match enc.kind {
        EncodingKind::Rppc => r,
        EncodingKind::Plucker => d.cross(r),
    }
}

/// Gaussian centers `μ = o + depth · d` for every pixel.
pub fn unproject_center<T: Real>(rays: &RayBundle<T>, depth: &Array2<T>) -> Result<Array3<T>> {
    let (h, w) = (rays.height(), rays.width());
    if depth.dim() != (h, w) {
        return Err(Error::Shape(format!("depth {:?} vs rays {h}x{w}", depth.dim())));
    }
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let d = depth[[y, x]];
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::InvalidDepth { index: y * w + x, value: d.to64() });
            }
            let p = rays.origin(y, x) + rays.direction(y, x) * d;
            for c in 0..3 {
                out[[y, x, c]] = p[c];
            }
        }
    }
    Ok(out)
}

/// One entry of `cameras.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    /// Row-major 3×3 intrinsics.
    pub intrinsics: [[f64; 3]; 3],
    /// Row-major 3×4 camera-to-world matrix `[R | t]`.
    pub camera_to_world: [[f64; 4]; 3],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub views: Vec<CameraRecord>,
}

impl<T: Real> From<&CameraView<T>> for CameraRecord {
    fn from(v: &CameraView<T>) -> Self {
        let r = v.rotation.to_f64();
        let t = v.translation.to_f64();
        CameraRecord {
            intrinsics: v.intrinsics.to_f64(),
            camera_to_world: [0, 1, 2].map(|i| [r[i][0], r[i][1], r[i][2], t[i]]),
            width: v.width,
            height: v.height,
        }
    }
}

impl CameraRecord {
    pub fn to_view<T: Real>(&self) -> Result<CameraView<T>> {
        let m = &self.camera_to_world;
        let view = CameraView {
            intrinsics: Mat3::from_f64(self.intrinsics),
            rotation: Mat3::from_f64([0, 1, 2].map(|i| [m[i][0], m[i][1], m[i][2]])),
            translation: Vec3::from_f64([m[0][3], m[1][3], m[2][3]]),
            width: self.width,
            height: self.height,
        };
        view.validate()?;
        Ok(view)
    }
}

pub fn write_cameras<T: Real>(path: &Path, views: &[CameraView<T>]) -> Result<()> {
    let file = CameraFile { views: views.iter().map(CameraRecord::from).collect() };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_cameras<T: Real>(path: &Path) -> Result<Vec<CameraView<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::load(path, e))?;
    file.views
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_view().map_err(|e| Error::load(path, format!("view {i}: {e}"))))
        .collect()
}
