//! Differentiable Gaussian splatting on the CPU.
//!
//! Each Gaussian is projected with the local affine (EWA) approximation,
//! visible Gaussians are sorted once per view by camera-space depth, and every
//! pixel composites front to back over the whole image (no tiling):
//!
//! ```text
//! C = Σ_i c_i α'_i Π_{j<i} (1 − α'_j) + background · Π_j (1 − α'_j)
//! α'_i = α_i exp(−½ Δᵀ Σ2D⁻¹ Δ)
//! ```
//!
//! Rendering is single threaded. Pixels accumulate Gaussians in sorted order
//! and the backward pass walks the same fragments in reverse, so results are
//! bit-reproducible.

use ndarray::{Array2, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::cloud::{CloudGrad, GaussianCloud};
use crate::error::{Error, Result};
use crate::linalg::{quat_rotation_vjp, quat_to_rotation, Mat3, Vec3};
use crate::scalar::Real;

/// Pixels whose accumulated opacity falls below this are invalid in depth maps.
pub const DEPTH_VALID_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Added to the diagonal of every 2D covariance, in px².
    pub eps2d: f64,
    /// Footprint radius in standard deviations; `None` splats over the whole image.
    pub cutoff_sigma: Option<f64>,
    /// Gaussians with camera-space z at or below this are culled.
    pub near_cull: f64,
    /// Background color composited behind the Gaussians.
    pub background: [f64; 3],
    /// A pixel stops accumulating once its transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { eps2d: 0.1, cutoff_sigma: Some(3.0), near_cull: 0.9, background: [0.0; 3], min_transmittance: 1e-4 }
    }
}

impl RenderSettings {
    /// Exact settings for derivative checks: no footprint cutoff, no early stop.
    pub fn exact() -> Self {
        Self { cutoff_sigma: None, min_transmittance: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    /// `H×W×3`.
    pub color: Array3<T>,
    /// Alpha-weighted expected camera-space depth; 0 where nothing was hit.
    pub depth: Array2<T>,
    /// Accumulated opacity `1 − Π(1 − α')`.
    pub alpha: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T> {
    pub depth: Array2<T>,
    /// `alpha >= 0.01`.
    pub valid: Array2<bool>,
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected<T> {
    /// Pixel coordinates of the projected center (pixel centers at +0.5).
    pub mean: [T; 2],
    /// Regularized 2D covariance `(xx, xy, yy)`, px².
    pub cov: [T; 3],
    /// Camera-space z of the center.
    pub depth: T,
}

/// Everything the backward pass needs about a visible Gaussian.
#[derive(Debug, Clone)]
struct Splat<T> {
    index: usize,
    p_cam: Vec3<T>,
    cov_cam: Mat3<T>,
    rot: Mat3<T>,
    mean: [T; 2],
    /// Inverse covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    conic: [T; 3],
    bbox: [usize; 4],
    frag_start: usize,
    frag_end: usize,
}

#[derive(Debug, Clone, Copy)]
struct Fragment<T> {
    pixel: u32,
    falloff: T,
    transmittance: T,
}

/// Recorded forward pass of [`render_view_with_tape`].
#[derive(Debug, Clone)]
pub struct RenderTape<T> {
    splats: Vec<Splat<T>>,
    frags: Vec<Fragment<T>>,
    background: [T; 3],
    width: usize,
    height: usize,
}

/// `Σ = R diag(s²) Rᵀ`.
pub fn covariance_3d<T: Real>(scale: Vec3<T>, rotation: [T; 4]) -> Mat3<T> {
    let r = quat_to_rotation(rotation);
    let m = r.mul_mat(&Mat3::diag(scale));
    m.mul_mat(&m.transpose())
}

struct ProjectionParts<T> {
    p_cam: Vec3<T>,
    cov_cam: Mat3<T>,
    rot: Mat3<T>,
    mean: [T; 2],
    cov2d: [T; 3],
}

fn project_parts<T: Real>(
    mean: Vec3<T>,
    scale: Vec3<T>,
    rotation: [T; 4],
    view: &CameraView<T>,
    w2c: &Mat3<T>,
    eps2d: T,
    near_cull: T,
) -> Option<ProjectionParts<T>> {
    let p = w2c.mul_vec(mean - view.translation);
    if !(p.z > near_cull) {
        return None;
    }
    let rot = quat_to_rotation(rotation);
    let m = rot.mul_mat(&Mat3::diag(scale));
    let cov_world = m.mul_mat(&m.transpose());
    let cov_cam = w2c.mul_mat(&cov_world).mul_mat(&w2c.transpose());
    let (fx, fy) = (view.fx(), view.fy());
    let iz = T::one() / p.z;
    let z = T::zero();
    let jac = [[fx * iz, z, -fx * p.x * iz * iz], [z, fy * iz, -fy * p.y * iz * iz]];
    let mut cov2d = [T::zero(); 3];
    // J Σ Jᵀ for the three unique entries.
    let js = |r: usize| -> [T; 3] { [0, 1, 2].map(|k| (0..3).map(|l| jac[r][l] * cov_cam.m[l][k]).sum()) };
    let j0 = js(0);
    let j1 = js(1);
    cov2d[0] = (0..3).map(|k| j0[k] * jac[0][k]).sum::<T>() + eps2d;
    cov2d[1] = (0..3).map(|k| j0[k] * jac[1][k]).sum::<T>();
    cov2d[2] = (0..3).map(|k| j1[k] * jac[1][k]).sum::<T>() + eps2d;
    let mean2 = [fx * p.x * iz + view.cx(), fy * p.y * iz + view.cy()];
    Some(ProjectionParts { p_cam: p, cov_cam, rot, mean: mean2, cov2d })
}

/// Projects one Gaussian into `view`. Returns `None` when the center lies at
/// or in front of `settings.near_cull` (culled, not an error).
pub fn project_gaussian<T: Real>(
    mean: Vec3<T>,
    scale: Vec3<T>,
    rotation: [T; 4],
    view: &CameraView<T>,
    settings: &RenderSettings,
) -> Option<Projected<T>> {
    let w2c = view.world_to_camera_rotation();
    project_parts(mean, scale, rotation, view, &w2c, T::of(settings.eps2d), T::of(settings.near_cull))
        .map(|p| Projected { mean: p.mean, cov: p.cov2d, depth: p.p_cam.z })
}

pub fn render_view<T: Real>(cloud: &GaussianCloud<T>, target: &CameraView<T>, settings: &RenderSettings) -> Result<RenderOutput<T>> {
    render_view_with_tape(cloud, target, settings).map(|(out, _)| out)
}

/// Alpha-weighted depth with pixels of accumulated opacity below 0.01 flagged.
pub fn render_depth<T: Real>(cloud: &GaussianCloud<T>, target: &CameraView<T>, settings: &RenderSettings) -> Result<DepthMap<T>> {
    let out = render_view(cloud, target, settings)?;
    Ok(depth_map(&out))
}

pub fn depth_map<T: Real>(out: &RenderOutput<T>) -> DepthMap<T> {
    let thr = T::of(DEPTH_VALID_ALPHA);
    DepthMap { depth: out.depth.clone(), valid: out.alpha.mapv(|a| a >= thr) }
}

pub fn render_view_with_tape<T: Real>(
    cloud: &GaussianCloud<T>,
    target: &CameraView<T>,
    settings: &RenderSettings,
) -> Result<(RenderOutput<T>, RenderTape<T>)> {
    target.validate()?;
    cloud.validate()?;
    let (w, h) = (target.width, target.height);
    let w2c = target.world_to_camera_rotation();
    let eps2d = T::of(settings.eps2d);
    let near = T::of(settings.near_cull);
    let half = T::of(0.5);

    let mut splats = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let Some(parts) = project_parts(cloud.means[i], cloud.scales[i], cloud.rotations[i], target, &w2c, eps2d, near) else {
            continue;
        };
        let [a, b, c] = parts.cov2d;
        let det = a * c - b * b;
        if !(det > T::zero()) {
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let bbox = match settings.cutoff_sigma {
            None => [0, w, 0, h],
            Some(k) => {
                let mid = half * (a + c);
                let lambda = mid + (mid * mid - det).max(T::zero()).sqrt();
                let r = (T::of(k) * lambda.sqrt()).to64();
                let (u, v) = (parts.mean[0].to64(), parts.mean[1].to64());
                let x0 = (u - r - 0.5).ceil().max(0.0);
                let x1 = (u + r - 0.5).floor() + 1.0;
                let y0 = (v - r - 0.5).ceil().max(0.0);
                let y1 = (v + r - 0.5).floor() + 1.0;
                if !(x1 > x0 && y1 > y0) || x0 >= w as f64 || y0 >= h as f64 {
                    continue;
                }
                [x0 as usize, (x1.min(w as f64)) as usize, y0 as usize, (y1.min(h as f64)) as usize]
            }
        };
        if bbox[0] >= bbox[1] || bbox[2] >= bbox[3] {
            continue;
        }
        splats.push(Splat {
            index: i,
            p_cam: parts.p_cam,
            cov_cam: parts.cov_cam,
            rot: parts.rot,
            mean: parts.mean,
            conic,
            bbox,
            frag_start: 0,
            frag_end: 0,
        });
    }
    splats.sort_by(|a, b| a.p_cam.z.partial_cmp(&b.p_cam.z).unwrap().then(a.index.cmp(&b.index)));

    let cutoff_q = settings.cutoff_sigma.map(|k| T::of(k * k));
    let min_t = T::of(settings.min_transmittance);
    let npix = w * h;
    let mut trans = vec![T::one(); npix];
    let mut done = vec![false; npix];
    let mut color = vec![Vec3::<T>::zero(); npix];
    let mut depth_acc = vec![T::zero(); npix];
    let mut weight_acc = vec![T::zero(); npix];
    let mut frags = Vec::new();

    for s in splats.iter_mut() {
        s.frag_start = frags.len();
        let i = s.index;
        let opacity = cloud.opacities[i];
        let col = cloud.colors[i];
        let z = s.p_cam.z;
        let [ca, cb, cc] = s.conic;
        for py in s.bbox[2]..s.bbox[3] {
            let dy = T::of(py as f64) + half - s.mean[1];
            let row = py * w;
            for px in s.bbox[0]..s.bbox[1] {
                let pix = row + px;
                if done[pix] {
                    continue;
                }
                let dx = T::of(px as f64) + half - s.mean[0];
                let q = ca * dx * dx + T::of(2.0) * cb * dx * dy + cc * dy * dy;
                if let Some(cq) = cutoff_q {
                    if q > cq {
                        continue;
                    }
                }
                let falloff = (-half * q).exp();
                if falloff == T::zero() {
                    continue;
                }
                let alpha = opacity * falloff;
                let t = trans[pix];
                let wgt = alpha * t;
                color[pix] += col * wgt;
                depth_acc[pix] += z * wgt;
                weight_acc[pix] += wgt;
                frags.push(Fragment { pixel: pix as u32, falloff, transmittance: t });
                let nt = t * (T::one() - alpha);
                trans[pix] = nt;
                if nt < min_t {
                    done[pix] = true;
                }
            }
        }
        s.frag_end = frags.len();
    }

    let bg = settings.background.map(T::of);
    let mut out_color = Array3::zeros((h, w, 3));
    let mut out_depth = Array2::zeros((h, w));
    let mut out_alpha = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for c in 0..3 {
                out_color[[y, x, c]] = color[p][c] + trans[p] * bg[c];
            }
            out_alpha[[y, x]] = T::one() - trans[p];
            if weight_acc[p] > T::zero() {
                out_depth[[y, x]] = depth_acc[p] / weight_acc[p];
            }
        }
    }
    let tape = RenderTape { splats, frags, background: bg, width: w, height: h };
    Ok((RenderOutput { color: out_color, depth: out_depth, alpha: out_alpha }, tape))
}

impl<T: Real> RenderTape<T> {
    pub fn fragment_count(&self) -> usize {
        self.frags.len()
    }

    /// Gradient of `Σ grad_color · color` with respect to every attribute of
    /// `cloud` (which must be the cloud that was rendered).
    pub fn backward(&self, cloud: &GaussianCloud<T>, view: &CameraView<T>, grad_color: ArrayView3<T>) -> Result<CloudGrad<T>> {
        if grad_color.dim() != (self.height, self.width, 3) {
            return Err(Error::Shape(format!("color gradient {:?} vs {}x{}x3", grad_color.dim(), self.height, self.width)));
        }
        let w = self.width;
        let npix = w * self.height;
        let half = T::of(0.5);
        let two = T::of(2.0);
        let gimg: Vec<Vec3<T>> = (0..npix)
            .map(|p| {
                let (y, x) = (p / w, p % w);
                Vec3::new(grad_color[[y, x, 0]], grad_color[[y, x, 1]], grad_color[[y, x, 2]])
            })
            .collect();
        let bg = Vec3::new(self.background[0], self.background[1], self.background[2]);
        // Color of everything behind the current Gaussian, per unit transmittance.
        let mut behind = vec![bg; npix];
        let mut grad = CloudGrad::zeros(cloud.len());
        let w2c = view.world_to_camera_rotation();
        let (fx, fy) = (view.fx(), view.fy());

        for s in self.splats.iter().rev() {
            let i = s.index;
            let opacity = cloud.opacities[i];
            let col = cloud.colors[i];
            let [ca, cb, cc] = s.conic;
            let mut g_col = Vec3::zero();
            let mut g_op = T::zero();
            let mut g_mean = [T::zero(); 2];
            // Gradient w.r.t. the conic as a full symmetric 2×2 matrix.
            let mut g_conic = [T::zero(); 3];
            for f in self.frags[s.frag_start..s.frag_end].iter().rev() {
                let pix = f.pixel as usize;
                let gc = gimg[pix];
                let alpha = opacity * f.falloff;
                let wgt = alpha * f.transmittance;
                g_col += gc * wgt;
                let b = behind[pix];
                let d_alpha = f.transmittance * (col - b).dot(gc);
                behind[pix] = col * alpha + b * (T::one() - alpha);
                g_op += d_alpha * f.falloff;
                let dq = -half * d_alpha * alpha;
                if dq == T::zero() {
                    continue;
                }
                let (py, px) = (pix / w, pix % w);
                let dx = T::of(px as f64) + half - s.mean[0];
                let dy = T::of(py as f64) + half - s.mean[1];
                g_conic[0] += dq * dx * dx;
                g_conic[1] += dq * dx * dy;
                g_conic[2] += dq * dy * dy;
                g_mean[0] -= dq * two * (ca * dx + cb * dy);
                g_mean[1] -= dq * two * (cb * dx + cc * dy);
            }
            grad.colors[i] = g_col;
            grad.opacities[i] = g_op;

            // Σ2D = inverse(conic): dL/dΣ = −A G A.
            let a2 = [[ca, cb], [cb, cc]];
            let ga = [[g_conic[0], g_conic[1]], [g_conic[1], g_conic[2]]];
            let mut tmp = [[T::zero(); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    tmp[r][c] = (0..2).map(|k| a2[r][k] * ga[k][c]).sum();
                }
            }
            let mut g_s2 = [[T::zero(); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    g_s2[r][c] = -(0..2).map(|k| tmp[r][k] * a2[k][c]).sum::<T>();
                }
            }

            let p = s.p_cam;
            let iz = T::one() / p.z;
            let z = T::zero();
            let jac = [[fx * iz, z, -fx * p.x * iz * iz], [z, fy * iz, -fy * p.y * iz * iz]];
            // dL/dΣcam = Jᵀ G J.
            let mut g_cov_cam = Mat3::zero();
            for a in 0..3 {
                for b in 0..3 {
                    let mut acc = T::zero();
                    for r in 0..2 {
                        for c in 0..2 {
                            acc += jac[r][a] * g_s2[r][c] * jac[c][b];
                        }
                    }
                    g_cov_cam.m[a][b] = acc;
                }
            }
            // dL/dJ = 2 G J Σcam.
            let mut g_jac = [[T::zero(); 3]; 2];
            for r in 0..2 {
                for b in 0..3 {
                    let mut acc = T::zero();
                    for c in 0..2 {
                        for k in 0..3 {
                            acc += g_s2[r][c] * jac[c][k] * s.cov_cam.m[k][b];
                        }
                    }
                    g_jac[r][b] = two * acc;
                }
            }
            let g_cov_world = w2c.transpose().mul_mat(&g_cov_cam).mul_mat(&w2c);
            let scale = cloud.scales[i];
            let m = s.rot.mul_mat(&Mat3::diag(scale));
            let g_m = g_cov_world.add(&g_cov_world.transpose()).mul_mat(&m);
            let mut g_scale = Vec3::zero();
            let mut g_rot = Mat3::zero();
            for r in 0..3 {
                for k in 0..3 {
                    g_scale[k] += g_m.m[r][k] * s.rot.m[r][k];
                    g_rot.m[r][k] = g_m.m[r][k] * scale[k];
                }
            }
            grad.scales[i] = g_scale;
            grad.rotations[i] = quat_rotation_vjp(cloud.rotations[i], &g_rot);

            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            let mut g_p = Vec3::new(
                g_mean[0] * fx * iz,
                g_mean[1] * fy * iz,
                -(g_mean[0] * fx * p.x + g_mean[1] * fy * p.y) * iz2,
            );
            g_p.x += g_jac[0][2] * (-fx * iz2);
            g_p.y += g_jac[1][2] * (-fy * iz2);
            g_p.z += g_jac[0][0] * (-fx * iz2)
                + g_jac[0][2] * (two * fx * p.x * iz3)
                + g_jac[1][1] * (-fy * iz2)
                + g_jac[1][2] * (two * fy * p.y * iz3);
            grad.means[i] = w2c.transpose().mul_vec(g_p);
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudRole;

    const IDQ: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    fn camera(w: usize, h: usize, f: f64) -> CameraView<f64> {
        CameraView::from_pinhole(f, f, w as f64 / 2.0, h as f64 / 2.0, Mat3::identity(), Vec3::zero(), w, h)
    }

    fn cloud_of(items: &[([f64; 3], [f64; 3], [f64; 4], f64, [f64; 3])]) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty();
        for (m, s, q, a, col) in items {
            c.push(Vec3::from_f64(*m), Vec3::from_f64(*s), *q, *a, Vec3::from_f64(*col));
        }
        c.role = CloudRole::Primary;
        c
    }

    #[test]
    fn isotropic_on_axis_projects_to_principal_point() {
        let cam = camera(16, 16, 20.0);
        let p = project_gaussian(Vec3::new(0.0, 0.0, 4.0), Vec3::new(0.2, 0.2, 0.2), IDQ, &cam, &RenderSettings::default()).unwrap();
        assert!((p.mean[0] - 8.0).abs() < 1e-12 && (p.mean[1] - 8.0).abs() < 1e-12);
        assert!(p.cov[1].abs() < 1e-12);
        assert!((p.cov[0] - p.cov[2]).abs() < 1e-12);
        assert!((p.cov[0] - (1.0 + 0.1)).abs() < 1e-12);
        assert_eq!(p.depth, 4.0);
    }

    #[test]
    fn focal_length_scaling() {
        let s = RenderSettings { eps2d: 0.0, ..RenderSettings::default() };
        let m = Vec3::new(0.5, -0.3, 3.0);
        let sc = Vec3::new(0.1, 0.2, 0.3);
        let a = project_gaussian(m, sc, IDQ, &camera(32, 32, 10.0), &s).unwrap();
        let b = project_gaussian(m, sc, IDQ, &camera(32, 32, 20.0), &s).unwrap();
        for k in 0..2 {
            assert!(((b.mean[k] - 16.0) - 2.0 * (a.mean[k] - 16.0)).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((b.cov[k] - 4.0 * a.cov[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rotation_covariance_is_diagonal_squares() {
        let cov = covariance_3d(Vec3::new(0.5, 2.0, 3.0), IDQ);
        assert_eq!(cov, Mat3::diag(Vec3::new(0.25, 4.0, 9.0)));
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = camera(8, 8, 8.0);
        assert!(project_gaussian(Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.1, 0.1, 0.1), IDQ, &cam, &RenderSettings::default()).is_none());
        let c = cloud_of(&[([0.0, 0.0, -2.0], [0.5; 3], IDQ, 1.0, [1.0; 3])]);
        let out = render_view(&c, &cam, &RenderSettings::default()).unwrap();
        assert!(out.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn empty_and_transparent_clouds_show_background() {
        let cam = camera(6, 5, 6.0);
        let s = RenderSettings { background: [0.2, 0.4, 0.6], ..RenderSettings::default() };
        let out = render_view(&GaussianCloud::<f64>::empty(), &cam, &s).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!([0, 1, 2].map(|c| out.color[[y, x, c]]), [0.2, 0.4, 0.6]);
            }
        }
        assert!(out.alpha.iter().all(|a| *a == 0.0));
        let depth = render_depth(&GaussianCloud::<f64>::empty(), &cam, &s).unwrap();
        assert!(depth.valid.iter().all(|v| !v));
        let c = cloud_of(&[([0.0, 0.0, 3.0], [0.5; 3], IDQ, 0.0, [1.0, 0.0, 0.0])]);
        let out = render_view(&c, &cam, &s).unwrap();
        assert!(out.color.iter().zip([0.2, 0.4, 0.6].iter().cycle()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn single_opaque_gaussian_depth() {
        // Center on pixel (4, 4)'s center so the falloff there is exactly 1.
        let cam = camera(8, 8, 8.0);
        let z = 3.0;
        let c = cloud_of(&[([0.5 * z / 8.0, 0.5 * z / 8.0, z], [0.3; 3], IDQ, 1.0, [0.5; 3])]);
        let d = render_depth(&c, &cam, &RenderSettings::default()).unwrap();
        assert!(d.valid[[4, 4]]);
        assert!((d.depth[[4, 4]] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn two_half_transparent_gaussians_depth() {
        let cam = camera(8, 8, 8.0);
        let at = |z: f64| [0.5 * z / 8.0, 0.5 * z / 8.0, z];
        let c = cloud_of(&[(at(4.0), [0.2; 3], IDQ, 0.5, [1.0; 3]), (at(2.0), [0.1; 3], IDQ, 0.5, [1.0; 3])]);
        let out = render_view(&c, &cam, &RenderSettings::default()).unwrap();
        assert!((out.depth[[4, 4]] - (0.5 * 2.0 + 0.25 * 4.0) / 0.75).abs() < 1e-12);
        assert!((out.alpha[[4, 4]] - 0.75).abs() < 1e-12);
    }
}
