//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use denoisegs::camera::{rays_for_view, CameraView};
use denoisegs::render::{render_view, render_view_with_tape, RenderSettings};
use denoisegs::cloud::{CloudRole, GaussianCloud, PixelLayout};
use denoisegs::linalg::{Mat3, Vec3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Array3<f64> {
    Array3::from_shape_fn((h, w, c), |_| rng.random::<f64>())
}

/// Unnormalized forward DFT as the literal double sum, one channel at a time.
/// Returns `(re, im)` indexed `[y][x][c]`.
pub fn brute_dft(img: &Array3<f64>) -> Vec<Vec<Vec<(f64, f64)>>> {
    let (h, w, ch) = img.dim();
    let tau = std::f64::consts::TAU;
    (0..h)
        .map(|u| {
            (0..w)
                .map(|v| {
                    (0..ch)
                        .map(|c| {
                            let mut re = 0.0;
                            let mut im = 0.0;
                            for y in 0..h {
                                for x in 0..w {
                                    let phase = -tau * (u as f64 * y as f64 / h as f64 + v as f64 * x as f64 / w as f64);
                                    re += img[[y, x, c]] * phase.cos();
                                    im += img[[y, x, c]] * phase.sin();
                                }
                            }
                            (re, im)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &Array3<f64>, h: f64, mut f: impl FnMut(&Array3<f64>) -> f64) -> Array3<f64> {
    let mut g = Array3::zeros(x.dim());
    let mut probe = x.clone();
    for (idx, out) in g.indexed_iter_mut() {
        let v = x[idx];
        probe[idx] = v + h;
        let fp = f(&probe);
        probe[idx] = v - h;
        let fm = f(&probe);
        probe[idx] = v;
        *out = (fp - fm) / (2.0 * h);
    }
    g
}

pub fn camera(h: usize, w: usize) -> CameraView<f64> {
    CameraView::with_fov(60.0, w, h, Mat3::identity(), Vec3::zero())
}

/// One-view pixel-aligned cloud whose Gaussians sit at the given depths.
pub fn aligned_cloud(depths: &[f64], h: usize, w: usize, role: CloudRole) -> GaussianCloud<f64> {
    let rays = rays_for_view(&camera(h, w)).unwrap();
    let layout = PixelLayout::from_rays(&[rays], depths.to_vec()).unwrap();
    let mut c = GaussianCloud::empty();
    for i in 0..depths.len() {
        c.push(layout.center(i), Vec3::from_f64([0.05; 3]), [1.0, 0.0, 0.0, 0.0], 0.5, Vec3::from_f64([0.5; 3]));
    }
    c.layout = Some(layout);
    c.role = role;
    c
}

/// Pixel color of one Gaussian predicted from the pinhole model directly:
/// 2D covariance from a numerically differentiated projection.
pub fn footprint_oracle(mean: [f64; 3], cov: [[f64; 3]; 3], opacity: f64, view: &CameraView<f64>, px: f64, py: f64) -> f64 {
    let (fx, fy, cx, cy) = (view.fx(), view.fy(), view.cx(), view.cy());
    let proj = |p: [f64; 3]| [fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy];
    let h = 1e-6;
    let mut jac = [[0.0; 3]; 2];
    for k in 0..3 {
        let mut a = mean;
        let mut b = mean;
        a[k] += h;
        b[k] -= h;
        let (pa, pb) = (proj(a), proj(b));
        for r in 0..2 {
            jac[r][k] = (pa[r] - pb[r]) / (2.0 * h);
        }
    }
    let mut c2 = [[0.0; 2]; 2];
    for r in 0..2 {
        for s in 0..2 {
            for k in 0..3 {
                for l in 0..3 {
                    c2[r][s] += jac[r][k] * cov[k][l] * jac[s][l];
                }
            }
        }
    }
    c2[0][0] += 0.1;
    c2[1][1] += 0.1;
    let m = proj(mean);
    let (dx, dy) = (px - m[0], py - m[1]);
    let det = c2[0][0] * c2[1][1] - c2[0][1] * c2[1][0];
    let q = (c2[1][1] * dx * dx - 2.0 * c2[0][1] * dx * dy + c2[0][0] * dy * dy) / det;
    opacity * (-0.5 * q).exp()
}

pub fn five_gaussians() -> GaussianCloud<f64> {
    let mut c = GaussianCloud::empty();
    let items = [
        ([0.1, -0.2, 3.0], [0.25, 0.18, 0.3], [0.9, 0.1, -0.2, 0.3], 0.7, [0.9, 0.2, 0.1]),
        ([-0.3, 0.1, 3.6], [0.3, 0.35, 0.2], [0.8, -0.3, 0.2, 0.1], 0.6, [0.1, 0.8, 0.3]),
        ([0.35, 0.3, 4.2], [0.4, 0.2, 0.3], [1.0, 0.0, 0.4, -0.2], 0.8, [0.3, 0.3, 0.9]),
        ([0.0, 0.05, 2.6], [0.12, 0.15, 0.1], [0.7, 0.2, 0.2, 0.6], 0.5, [0.6, 0.6, 0.2]),
        ([-0.2, -0.35, 4.8], [0.5, 0.45, 0.3], [0.95, -0.1, -0.1, 0.2], 0.9, [0.5, 0.1, 0.7]),
    ];
    for (m, s, q, a, col) in items {
        let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        c.push(Vec3::from_f64(m), Vec3::from_f64(s), q.map(|v| v / n), a, Vec3::from_f64(col));
    }
    c.role = CloudRole::Primary;
    c
}

fn probe(size: usize) -> Array3<f64> {
    Array3::from_shape_fn((size, size, 3), |(y, x, c)| ((y * 5 + x * 3 + c * 7) % 11) as f64 / 11.0 - 0.4)
}

fn objective(cloud: &GaussianCloud<f64>, view: &CameraView<f64>, r: &Array3<f64>) -> f64 {
    let out = render_view(cloud, view, &RenderSettings::exact()).unwrap();
    (&out.color * r).sum()
}

fn rel_err4(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst relative error between the tape gradient of `Σ probe·color` and
/// central differences, over every attribute of five Gaussians on an 8×8 view.
pub fn renderer_gradient_worst() -> f64 {
    let view = CameraView::from_pinhole(9.0, 9.0, 4.0, 4.0, Mat3::identity(), Vec3::zero(), 8, 8);
    let cloud = five_gaussians();
    let r = probe(8);
    let (_, tape) = render_view_with_tape(&cloud, &view, &RenderSettings::exact()).unwrap();
    let g = tape.backward(&cloud, &view, r.view()).unwrap();
    let h = 1e-6;
    let fd = |edit: &dyn Fn(&mut GaussianCloud<f64>, f64)| {
        let mut p = cloud.clone();
        edit(&mut p, h);
        let mut m = cloud.clone();
        edit(&mut m, -h);
        (objective(&p, &view, &r) - objective(&m, &view, &r)) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    for i in 0..cloud.len() {
        for k in 0..3 {
            worst = worst.max(rel_err4(fd(&|c, e| c.means[i][k] += e), g.means[i][k]));
            worst = worst.max(rel_err4(fd(&|c, e| c.scales[i][k] += e), g.scales[i][k]));
            worst = worst.max(rel_err4(fd(&|c, e| c.colors[i][k] += e), g.colors[i][k]));
        }
        for k in 0..4 {
            worst = worst.max(rel_err4(fd(&|c, e| c.rotations[i][k] += e), g.rotations[i][k]));
        }
        worst = worst.max(rel_err4(fd(&|c, e| c.opacities[i] += e), g.opacities[i]));
        // Depth along the viewing ray through the center.
        let dir = cloud.means[i].normalized();
        let analytic = g.means[i].dot(dir);
        worst = worst.max(rel_err4(fd(&|c, e| c.means[i] += dir * e), analytic));
    }
    worst
}

