//! Procedural multi-view scenes, the on-disk scene layout and burst assembly.
//!
//! A scene is a textured back wall plus a few ellipsoidal objects, all made of
//! Gaussians and rendered with [`crate::render`], so images and depth maps
//! agree by construction. Cameras sit within a small disc around the origin
//! and look towards `look_target`.
//!
//! Scene directory:
//!
//! ```text
//! images/000.png   8-bit sRGB
//! cameras.json     intrinsics, camera-to-world and size per view
//! depth/000.pfm    optional camera-space depth, world units
//! scene.json       optional id and white-balance gains
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{look_at, read_cameras, write_cameras, CameraView};
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::io::{quantize, read_pfm, read_png, write_pfm, write_png};
use crate::linalg::Vec3;
use crate::noise::{apply_noise, delinearize, linearize, NoiseParams};
use crate::render::{render_view, RenderSettings};
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Cameras are placed uniformly in a disc of this radius in the xy plane.
    pub camera_radius: f64,
    pub camera_depth_jitter: f64,
    pub look_target: [f64; 3],
    pub target_jitter: f64,
    pub wall_depth: [f64; 2],
    /// Grid pitch of the wall Gaussians, world units.
    pub wall_spacing: f64,
    pub objects: [usize; 2],
    pub object_depth: [f64; 2],
    pub object_radius: [f64; 2],
    pub gaussians_per_object: usize,
    pub wb_gains: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            views: 8,
            width: 64,
            height: 64,
            fov_deg: 60.0,
            camera_radius: 0.35,
            camera_depth_jitter: 0.15,
            look_target: [0.0, 0.0, 5.0],
            target_jitter: 0.3,
            wall_depth: [6.0, 8.0],
            wall_spacing: 0.16,
            objects: [2, 4],
            object_depth: [2.5, 5.0],
            object_radius: [0.35, 0.9],
            gaussians_per_object: 160,
            wb_gains: [1.0; 3],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.views < 2 {
            return bad("a scene needs at least 2 views");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 179.0) {
            return bad("fov_deg must lie in (0, 179)");
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !ordered(self.wall_depth) || !ordered(self.object_depth) || !ordered(self.object_radius) {
            return bad("depth and radius ranges must be positive and ordered");
        }
        if self.objects[0] > self.objects[1] || !(self.wall_spacing > 0.0) || self.gaussians_per_object == 0 {
            return bad("object count range, wall spacing and Gaussians per object must be valid");
        }
        if self.camera_radius < 0.0 || self.camera_depth_jitter < 0.0 || self.target_jitter < 0.0 {
            return bad("camera jitters must be non-negative");
        }
        if self.wb_gains.iter().any(|g| !(*g >= 1.0 && g.is_finite())) {
            return bad("white-balance gains must be at least 1 so linear values stay in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub views: Vec<CameraView<f64>>,
    /// 8-bit quantized sRGB, `H×W×3`.
    pub images: Vec<Array3<f64>>,
    pub depths: Option<Vec<Array2<f64>>>,
    /// Ground-truth primitives of a generated scene.
    pub cloud: Option<GaussianCloud<f64>>,
    pub wb_gains: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    id: String,
    wb_gains: [f64; 3],
}

impl Scene {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::Invariant(format!("scene {} has {} views, needs at least 2", self.id, self.views.len())));
        }
        if self.images.len() != self.views.len() {
            return Err(Error::Invariant(format!("{} images for {} cameras", self.images.len(), self.views.len())));
        }
        let (h, w, _) = self.images[0].dim();
        for (i, (img, v)) in self.images.iter().zip(&self.views).enumerate() {
            v.validate()?;
            if img.dim() != (h, w, 3) {
                return Err(Error::Invariant(format!("image {i} is {:?}, expected {h}x{w}x3", img.dim())));
            }
            if (v.height, v.width) != (h, w) {
                return Err(Error::Invariant(format!("camera {i} is {}x{}, image is {h}x{w}", v.height, v.width)));
            }
        }
        if let Some(d) = &self.depths {
            if d.len() != self.views.len() || d.iter().any(|m| m.dim() != (h, w)) {
                return Err(Error::Invariant("depth maps do not match the views".into()));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(0.05..0.95))
}

fn unit_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Quaternion `(w, x, y, z)` of the rotation taking `+z` to `n`.
fn quat_z_to(n: Vec3<f64>) -> [f64; 4] {
    let z = Vec3::new(0.0, 0.0, 1.0);
    let c = z.dot(n);
    if c < -0.999_999 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let a = z.cross(n);
    let q = [1.0 + c, a.x, a.y, a.z];
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / qn)
}

/// Random smooth texture: a mix of three colors driven by sinusoidal
/// gratings, plus hard-edged discs.
struct Texture {
    palette: [[f64; 3]; 3],
    waves: Vec<(f64, f64, f64, f64)>,
    discs: Vec<(f64, f64, f64, [f64; 3])>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let palette = [random_color(rng), random_color(rng), random_color(rng)];
        let waves = (0..4)
            .map(|_| {
                let freq = rng.random_range(0.8..6.0);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
            })
            .collect();
        let discs = (0..rng.random_range(4..12))
            .map(|_| {
                (
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(0.15..0.8),
                    random_color(rng),
                )
            })
            .collect();
        Self { palette, waves, discs }
    }

    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        for &(cu, cv, r, col) in &self.discs {
            if (u - cu).powi(2) + (v - cv).powi(2) < r * r {
                return col;
            }
        }
        let mut s = [0.0; 2];
        for (k, &(fu, fv, ph, amp)) in self.waves.iter().enumerate() {
            s[k % 2] += amp * (fu * u + fv * v + ph).sin();
        }
        let t0 = 0.5 + 0.25 * s[0];
        let t1 = 0.5 + 0.25 * s[1];
        let p = &self.palette;
        [0, 1, 2].map(|c| ((1.0 - t0) * p[0][c] + t0 * ((1.0 - t1) * p[1][c] + t1 * p[2][c])).clamp(0.0, 1.0))
    }
}

fn scene_cameras(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<CameraView<f64>> {
    let target = Vec3::from_f64(cfg.look_target);
    let up = Vec3::new(0.0, -1.0, 0.0);
    (0..cfg.views)
        .map(|_| {
            let r = cfg.camera_radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let eye = Vec3::new(r * a.cos(), r * a.sin(), cfg.camera_depth_jitter * rng.random_range(-1.0..=1.0));
            let j = cfg.target_jitter;
            let t = target + Vec3::new(j * rng.random_range(-1.0..=1.0), j * rng.random_range(-1.0..=1.0), 0.0);
            CameraView::with_fov(cfg.fov_deg, cfg.width, cfg.height, look_at(eye, t, up), eye)
        })
        .collect()
}

fn scene_cloud(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> GaussianCloud<f64> {
    let mut cloud = GaussianCloud::empty();
    // Back wall, slightly tilted, large enough to fill every view.
    let z = uniform(rng, cfg.wall_depth);
    let tilt = 0.25;
    let normal = Vec3::new(rng.random_range(-tilt..tilt), rng.random_range(-tilt..tilt), 1.0).normalized();
    let e1 = Vec3::new(0.0, 1.0, 0.0).cross(normal).normalized();
    let e2 = normal.cross(e1);
    let half_fov = 0.5 * cfg.fov_deg.to_radians();
    let aspect = cfg.height as f64 / cfg.width as f64;
    let reach = 1.2 * (cfg.wall_depth[1] * half_fov.tan() * aspect.max(1.0) + cfg.camera_radius + cfg.target_jitter);
    let center = Vec3::new(cfg.look_target[0], cfg.look_target[1], z);
    let tex = Texture::random(rng, reach);
    let s = cfg.wall_spacing;
    let n = (reach / s).ceil() as i64;
    let q = quat_z_to(normal);
    for i in -n..=n {
        for j in -n..=n {
            let (u, v) = (i as f64 * s, j as f64 * s);
            let p = center + e1 * u + e2 * v;
            let col = tex.color(u, v);
            cloud.push(p, Vec3::new(0.6 * s, 0.6 * s, 0.02), q, 1.0, Vec3::from_f64(col));
        }
    }
    // Ellipsoidal objects made of surface Gaussians.
    let count = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    for _ in 0..count {
        let oz = uniform(rng, cfg.object_depth);
        let spread = 0.6 * oz * half_fov.tan();
        let c = Vec3::new(
            cfg.look_target[0] + rng.random_range(-spread..spread),
            cfg.look_target[1] + rng.random_range(-spread..spread),
            oz,
        );
        let radii = [0; 3].map(|_| uniform(rng, cfg.object_radius));
        let orient = crate::linalg::quat_to_rotation(unit_quat(rng));
        let tex = Texture::random(rng, 1.0);
        let m = cfg.gaussians_per_object;
        let area = 4.0 * std::f64::consts::PI * ((radii[0] * radii[1] + radii[1] * radii[2] + radii[0] * radii[2]) / 3.0);
        let sigma = 0.55 * (area / m as f64).sqrt();
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for k in 0..m {
            let y = 1.0 - 2.0 * (k as f64 + 0.5) / m as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * k as f64;
            let unit = Vec3::new(r * th.cos(), y, r * th.sin());
            let local = Vec3::new(unit.x * radii[0], unit.y * radii[1], unit.z * radii[2]);
            let p = c + orient.mul_vec(local);
            let nrm = orient.mul_vec(Vec3::new(unit.x / radii[0], unit.y / radii[1], unit.z / radii[2])).normalized();
            let col = tex.color(th.rem_euclid(std::f64::consts::TAU) / 2.0, 2.0 * y);
            cloud.push(p, Vec3::new(sigma, sigma, 0.3 * sigma), quat_z_to(nrm), 0.97, Vec3::from_f64(col));
        }
    }
    cloud
}

/// Builds a random scene and renders every view. Images are quantized to 8
/// bits; depth maps are the renderer's alpha-weighted camera-space depth.
pub fn generate_synthetic_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = stream(seed, &[tag::SCENE]);
    let views = scene_cameras(cfg, &mut rng);
    let cloud = scene_cloud(cfg, &mut rng);
    let settings = RenderSettings::default();
    let mut images = Vec::with_capacity(views.len());
    let mut depths = Vec::with_capacity(views.len());
    for v in &views {
        let out = render_view(&cloud, v, &settings)?;
        images.push(quantize(out.color.view()));
        depths.push(out.depth);
    }
    let scene = Scene {
        id: format!("scene_{seed:016x}"),
        views,
        images,
        depths: Some(depths),
        cloud: Some(cloud),
        wb_gains: cfg.wb_gains,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    for (i, img) in scene.images.iter().enumerate() {
        write_png(&dir.join(format!("images/{i:03}.png")), img.view())?;
    }
    write_cameras(&dir.join("cameras.json"), &scene.views)?;
    if let Some(depths) = &scene.depths {
        for (i, d) in depths.iter().enumerate() {
            write_pfm(&dir.join(format!("depth/{i:03}.pfm")), d.view())?;
        }
    }
    let meta = SceneMeta { id: scene.id.clone(), wb_gains: scene.wb_gains };
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Loads a scene directory. Depth maps are kept only if every view has one.
/// Depth is stored as 32-bit floats, so loaded depths are f32-rounded.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let cam_path = dir.join("cameras.json");
    if !cam_path.is_file() {
        return Err(Error::load(&cam_path, "camera file not found"));
    }
    let views: Vec<CameraView<f64>> = read_cameras(&cam_path)?;
    let mut images = Vec::with_capacity(views.len());
    for i in 0..views.len() {
        let p = dir.join(format!("images/{i:03}.png"));
        if !p.is_file() {
            return Err(Error::load(&p, "image listed in cameras.json is missing"));
        }
        images.push(read_png(&p)?);
    }
    let depth_paths: Vec<_> = (0..views.len()).map(|i| dir.join(format!("depth/{i:03}.pfm"))).collect();
    let depths = if !depth_paths.is_empty() && depth_paths.iter().all(|p| p.is_file()) {
        Some(depth_paths.iter().map(|p| read_pfm(p)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let meta_path = dir.join("scene.json");
    let (id, wb_gains) = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path)?;
        let meta: SceneMeta = serde_json::from_str(&text).map_err(|e| Error::load(&meta_path, e))?;
        (meta.id, meta.wb_gains)
    } else {
        (dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), [1.0; 3])
    };
    let scene = Scene { id, views, images, depths, cloud: None, wb_gains };
    scene.validate()?;
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// The target is one of the input views.
    Denoise,
    /// The target view is held out of the inputs.
    Nvs,
}

/// Camera-baseline limits used when picking burst views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    pub min_baseline: f64,
    pub max_baseline: f64,
}

impl Default for Selection {
    fn default() -> Self {
        Self { min_baseline: 0.02, max_baseline: 1.0 }
    }
}

/// Seeded ordering of all scene views. Views are visited in a random order
/// and accepted greedily if their baseline to every accepted view lies within
/// the limits; rejected views follow in visiting order. A burst of size `V`
/// takes the first `V` entries, so smaller bursts are prefixes (and subsets)
/// of larger ones drawn with the same seed.
pub fn burst_order(scene: &Scene, selection: &Selection, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, &[tag::BURST]);
    let mut idx: Vec<usize> = (0..scene.len()).collect();
    idx.shuffle(&mut rng);
    let mut accepted: Vec<usize> = Vec::with_capacity(idx.len());
    let mut rejected = Vec::new();
    for i in idx {
        let ok = accepted.iter().all(|&j| {
            let b = (scene.views[i].center() - scene.views[j].center()).norm();
            b >= selection.min_baseline && b <= selection.max_baseline
        });
        if ok {
            accepted.push(i);
        } else {
            rejected.push(i);
        }
    }
    accepted.extend(rejected);
    accepted
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstSample<T> {
    pub scene_id: String,
    /// Scene view index of every input.
    pub input_indices: Vec<usize>,
    pub input_views: Vec<CameraView<T>>,
    /// Noisy sRGB inputs.
    pub noisy: Vec<Array3<T>>,
    /// Clean sRGB counterparts of the inputs.
    pub clean: Vec<Array3<T>>,
    pub target_index: usize,
    pub target_view: CameraView<T>,
    pub target: Array3<T>,
    pub task: Task,
    pub noise: NoiseParams,
}

impl<T: Real> BurstSample<T> {
    pub fn burst_size(&self) -> usize {
        self.input_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.input_indices.len();
        if v < 2 {
            return Err(Error::Invariant(format!("burst of {v} views, needs at least 2")));
        }
        if self.input_views.len() != v || self.noisy.len() != v || self.clean.len() != v {
            return Err(Error::Invariant("burst arrays differ in length".into()));
        }
        let inside = self.input_indices.contains(&self.target_index);
        match (self.task, inside) {
            (Task::Denoise, false) => Err(Error::Invariant("denoising target must be one of the inputs".into())),
            (Task::Nvs, true) => Err(Error::Invariant("novel-view target must not be an input".into())),
            _ => Ok(()),
        }
    }

    /// Position of the target within the inputs (denoising only).
    pub fn target_position(&self) -> Option<usize> {
        self.input_indices.iter().position(|&i| i == self.target_index)
    }
}

pub fn make_burst<T: Real>(scene: &Scene, task: Task, burst_size: usize, noise: &NoiseParams, seed: u64) -> Result<BurstSample<T>> {
    make_burst_with(scene, task, burst_size, noise, seed, &Selection::default(), false)
}

/// Noise seeds depend on the scene view index, so a view receives the same
/// noise realization in every burst drawn with the same seed. `clip` clamps
/// the noisy linear values to `[0, 1]` before delinearizing.
pub fn make_burst_with<T: Real>(
    scene: &Scene,
    task: Task,
    burst_size: usize,
    noise: &NoiseParams,
    seed: u64,
    selection: &Selection,
    clip: bool,
) -> Result<BurstSample<T>> {
    scene.validate()?;
    noise.validate()?;
    if burst_size < 2 {
        return Err(Error::Config(format!("burst size {burst_size} is below 2")));
    }
    let needed = burst_size + usize::from(task == Task::Nvs);
    if scene.len() < needed {
        return Err(Error::Config(format!("scene {} has {} views, {task:?} with V={burst_size} needs {needed}", scene.id, scene.len())));
    }
    let order = burst_order(scene, selection, seed);
    let inputs = order[..burst_size].to_vec();
    let target_index = match task {
        Task::Denoise => inputs[stream(seed, &[tag::TASK]).random_range(0..burst_size)],
        Task::Nvs => order[burst_size],
    };
    let mut noisy = Vec::with_capacity(burst_size);
    let mut clean = Vec::with_capacity(burst_size);
    for &i in &inputs {
        let img = &scene.images[i];
        if noise.sigma_r == 0.0 && noise.sigma_s == 0.0 {
            // Skip the gamma round trip so noise-free inputs equal the clean views exactly.
            noisy.push(img.mapv(T::of));
            clean.push(img.mapv(T::of));
            continue;
        }
        let lin = linearize(img.view(), scene.wb_gains)?;
        let n = apply_noise(lin.view(), noise, derive_seed(seed, &[tag::NOISE, i as u64]), clip)?;
        noisy.push(delinearize(n.view(), scene.wb_gains)?.mapv(T::of));
        clean.push(img.mapv(T::of));
    }
    let sample = BurstSample {
        scene_id: scene.id.clone(),
        input_views: inputs.iter().map(|&i| scene.views[i].cast()).collect(),
        input_indices: inputs,
        noisy,
        clean,
        target_view: scene.views[target_index].cast(),
        target: scene.images[target_index].mapv(T::of),
        target_index,
        task,
        noise: *noise,
    };
    sample.validate()?;
    Ok(sample)
}

#[derive(Debug, Serialize, Deserialize)]
struct BurstMeta {
    scene_id: String,
    task: Task,
    input_indices: Vec<usize>,
    target_index: usize,
    noise: NoiseParams,
}

/// Writes `inputs/NNN.png` (noisy), `clean/NNN.png`, `target.png`,
/// `cameras.json` (inputs then target) and `burst.json`.
pub fn save_burst<T: Real>(burst: &BurstSample<T>, dir: &Path) -> Result<()> {
    burst.validate()?;
    for (i, (n, c)) in burst.noisy.iter().zip(&burst.clean).enumerate() {
        write_png(&dir.join(format!("inputs/{i:03}.png")), n.view())?;
        write_png(&dir.join(format!("clean/{i:03}.png")), c.view())?;
    }
    write_png(&dir.join("target.png"), burst.target.view())?;
    let mut cams = burst.input_views.clone();
    cams.push(burst.target_view.clone());
    write_cameras(&dir.join("cameras.json"), &cams)?;
    let meta = BurstMeta {
        scene_id: burst.scene_id.clone(),
        task: burst.task,
        input_indices: burst.input_indices.clone(),
        target_index: burst.target_index,
        noise: burst.noise,
    };
    fs::write(dir.join("burst.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_burst<T: Real>(dir: &Path) -> Result<BurstSample<T>> {
    let meta_path = dir.join("burst.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::load(&meta_path, e))?;
    let meta: BurstMeta = serde_json::from_str(&text).map_err(|e| Error::load(&meta_path, e))?;
    let mut cams: Vec<CameraView<T>> = read_cameras(&dir.join("cameras.json"))?;
    let v = meta.input_indices.len();
    if cams.len() != v + 1 {
        return Err(Error::load(dir.join("cameras.json"), format!("expected {} cameras, found {}", v + 1, cams.len())));
    }
    let target_view = cams.pop().expect("non-empty");
    let read_all = |sub: &str| (0..v).map(|i| read_png(&dir.join(format!("{sub}/{i:03}.png")))).collect::<Result<Vec<_>>>();
    let sample = BurstSample {
        scene_id: meta.scene_id,
        input_indices: meta.input_indices,
        input_views: cams,
        noisy: read_all("inputs")?,
        clean: read_all("clean")?,
        target_index: meta.target_index,
        target_view,
        target: read_png(&dir.join("target.png"))?,
        task: meta.task,
        noise: meta.noise,
    };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig { width: 32, height: 32, ..SceneConfig::default() }
    }

    #[test]
    fn generation_is_deterministic_and_self_consistent() {
        let cfg = SceneConfig { views: 2, ..small() };
        let a = generate_synthetic_scene(&cfg, 4).unwrap();
        let b = generate_synthetic_scene(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        let cloud = a.cloud.as_ref().unwrap();
        for (v, img) in a.views.iter().zip(&a.images) {
            let again = quantize(render_view(cloud, v, &RenderSettings::default()).unwrap().color.view());
            assert_eq!(&again, img);
        }
        assert_ne!(a.images[0], generate_synthetic_scene(&cfg, 5).unwrap().images[0]);
    }

    #[test]
    fn single_view_config_rejected() {
        let cfg = SceneConfig { views: 1, ..small() };
        assert!(matches!(generate_synthetic_scene(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn wall_fills_every_view() {
        let s = generate_synthetic_scene(&small(), 9).unwrap();
        for d in s.depths.as_ref().unwrap() {
            assert!(d.iter().all(|z| *z > 1.0 && *z < 9.0), "uncovered pixels");
        }
    }

    #[test]
    fn task_protocols_and_subsets() {
        let s = generate_synthetic_scene(&small(), 1).unwrap();
        let noise = NoiseParams::new(0.02, 0.05).unwrap();
        for seed in 0..10 {
            let d: BurstSample<f64> = make_burst(&s, Task::Denoise, 2, &noise, seed).unwrap();
            assert!(d.input_indices.contains(&d.target_index));
            let n: BurstSample<f64> = make_burst(&s, Task::Nvs, 2, &noise, seed).unwrap();
            assert!(!n.input_indices.contains(&n.target_index));
            let n8: BurstSample<f64> = make_burst(&s, Task::Denoise, 8, &noise, seed).unwrap();
            assert_eq!(&n8.input_indices[..2], &n.input_indices[..]);
            assert_eq!(&n8.noisy[..2], &n.noisy[..]);
        }
        assert!(make_burst::<f64>(&s, Task::Nvs, 8, &noise, 0).is_err());
    }

    #[test]
    fn zero_noise_returns_clean_inputs() {
        let s = generate_synthetic_scene(&small(), 2).unwrap();
        let b: BurstSample<f64> = make_burst(&s, Task::Denoise, 3, &NoiseParams::zero(), 7).unwrap();
        for (n, c) in b.noisy.iter().zip(&b.clean) {
            assert!(n.iter().zip(c.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }

    #[test]
    fn scene_and_burst_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_scene(&SceneConfig { views: 3, ..small() }, 3).unwrap();
        save_scene(&s, dir.path()).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back.images, s.images);
        assert_eq!(back.views, s.views);
        assert_eq!(back.id, s.id);
        let d32 = |m: &Array2<f64>| m.mapv(|v| v as f32 as f64);
        assert_eq!(back.depths.unwrap(), s.depths.as_ref().unwrap().iter().map(d32).collect::<Vec<_>>());

        let b: BurstSample<f64> = make_burst(&s, Task::Nvs, 2, &NoiseParams::new(0.01, 0.02).unwrap(), 1).unwrap();
        let bdir = dir.path().join("burst");
        save_burst(&b, &bdir).unwrap();
        let lb: BurstSample<f64> = load_burst(&bdir).unwrap();
        assert_eq!(lb.input_indices, b.input_indices);
        assert_eq!(lb.target, b.target);
        assert_eq!(lb.noisy, b.noisy.iter().map(|i| quantize(i.view())).collect::<Vec<_>>());
    }

    #[test]
    fn load_errors_are_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_scene(dir.path()).unwrap_err().to_string();
        assert!(err.contains("cameras.json"), "{err}");
        let s = generate_synthetic_scene(&SceneConfig { views: 2, ..small() }, 3).unwrap();
        save_scene(&s, dir.path()).unwrap();
        write_png(&dir.path().join("images/001.png"), Array3::<f64>::zeros((16, 32, 3)).view()).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Invariant(_))));
    }
}
