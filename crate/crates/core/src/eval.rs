//! Image and depth metrics, gain sweeps, throughput and spectra.
//!
//! Metrics are computed in sRGB, the space the model reads and writes.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Serialize, Serializer};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::write_gray_png;
use crate::losses::{dft2, perceptual_loss, GradientPyramid};
use crate::model::{GaussianModel, ModelInput};
use crate::noise::{gain_to_sigmas, NoiseParams};
use crate::render::{depth_map, render_view, DepthMap};
use crate::rng::{derive_seed, tag};
use crate::scalar::Real;
use crate::scene::{generate_synthetic_scene, make_burst_with, BurstSample, Scene, Task};

/// Peak signal-to-noise ratio; identical images have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

/// Finite values as numbers, the infinite flag as the string `"inf"`.
impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

fn same_shape(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

pub fn psnr<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>, peak: f64) -> Result<Psnr> {
    same_shape(pred.shape(), gt.shape())?;
    if pred.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    let mse = pred.iter().zip(gt.iter()).map(|(&p, &g)| (p.to64() - g.to64()).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(if mse == 0.0 { Psnr::Infinite } else { Psnr::Finite(10.0 * (peak * peak / mse).log10()) })
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WIN] {
    let mut k = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter keeping only positions where the window fits.
fn filter_valid(img: &Array2<f64>, k: &[f64; SSIM_WIN]) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h + 1 - SSIM_WIN, w + 1 - SSIM_WIN);
    let rows: Array2<f64> = Array2::from_shape_fn((h, ow), |(y, x)| (0..SSIM_WIN).map(|i| k[i] * img[[y, x + i]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(y, x)| (0..SSIM_WIN).map(|i| k[i] * rows[[y + i, x]]).sum())
}

fn ssim_channel(a: ArrayView2<f64>, b: ArrayView2<f64>, k: &[f64; SSIM_WIN]) -> f64 {
    let a = a.to_owned();
    let b = b.to_owned();
    let mu_a = filter_valid(&a, k);
    let mu_b = filter_valid(&b, k);
    let aa = filter_valid(&(&a * &a), k);
    let bb = filter_valid(&(&b * &b), k);
    let ab = filter_valid(&(&a * &b), k);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut sum = 0.0;
    for (((&ma, &mb), (&saa, &sbb)), &sab) in mu_a.iter().zip(&mu_b).zip(aa.iter().zip(&bb)).zip(&ab) {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / mu_a.len() as f64
}

/// Mean structural similarity: 11×11 Gaussian window (σ 1.5), data range 1,
/// averaged over the positions where the window fits and over channels.
pub fn ssim<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<f64> {
    same_shape(pred.shape(), gt.shape())?;
    let (h, w, ch) = pred.dim();
    if h < SSIM_WIN || w < SSIM_WIN || ch == 0 {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {SSIM_WIN}x{SSIM_WIN} window")));
    }
    let k = gaussian_kernel();
    let p = pred.mapv(|v| v.to64());
    let g = gt.mapv(|v| v.to64());
    let total: f64 = (0..ch).map(|c| ssim_channel(p.index_axis(Axis(2), c), g.index_axis(Axis(2), c), &k)).sum();
    Ok(total / ch as f64)
}

/// Mean of `|pred − ref| / ref` over the mask.
pub fn depth_abs_rel<T: Real>(pred: ArrayView2<T>, reference: ArrayView2<T>, mask: ArrayView2<bool>) -> Result<f64> {
    same_shape(pred.shape(), reference.shape())?;
    same_shape(pred.shape(), mask.shape())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &r), &m) in pred.iter().zip(reference.iter()).zip(mask.iter()) {
        if !m {
            continue;
        }
        let r = r.to64();
        if r <= 0.0 {
            return Err(Error::Domain(format!("reference depth {r} inside the mask")));
        }
        sum += (p.to64() - r).abs() / r;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("depth mask is empty".into()));
    }
    Ok(sum / n as f64)
}

/// Metrics of one model prediction on one burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SceneMetrics {
    pub scene: u64,
    pub psnr: Psnr,
    pub ssim: f64,
    pub depth_abs_rel: f64,
    /// Distance under the built-in gradient-pyramid extractor. Not LPIPS.
    pub pyramid_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainMetrics {
    /// 0 means noise-free inputs.
    pub gain: f64,
    pub sigma_r: f64,
    pub sigma_s: f64,
    /// Mean of the finite per-scene values.
    pub psnr: f64,
    pub infinite_psnr_scenes: usize,
    pub ssim: f64,
    pub depth_abs_rel: f64,
    pub pyramid_distance: f64,
    pub scenes: Vec<SceneMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpsReport {
    pub fps: f64,
    pub median_seconds: f64,
    pub trials: usize,
    pub burst_size: usize,
    pub height: usize,
    pub width: usize,
    pub hardware: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub burst_size: usize,
    pub color_space: String,
    pub gains: Vec<GainMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_abs_rel: f64,
    pub fps: Option<FpsReport>,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (gain, scene).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gain,scene,psnr,ssim,depth_abs_rel,pyramid_distance\n");
        for g in &self.gains {
            for m in &g.scenes {
                let p = match m.psnr {
                    Psnr::Finite(v) => v.to_string(),
                    Psnr::Infinite => "inf".into(),
                };
                let _ = writeln!(s, "{},{},{},{},{},{}", g.gain, m.scene, p, m.ssim, m.depth_abs_rel, m.pyramid_distance);
            }
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("per_scene.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Held-out scenes, drawn from `eval.seed` and never from the training seed.
pub fn eval_scenes(cfg: &ExperimentConfig) -> Result<Vec<Scene>> {
    (0..cfg.eval.scenes as u64)
        .map(|k| generate_synthetic_scene(&cfg.scene, derive_seed(cfg.eval.seed, &[tag::EVAL_DATA, k])))
        .collect()
}

pub fn noise_for_gain(cfg: &ExperimentConfig, gain: f64) -> Result<NoiseParams> {
    if gain == 0.0 {
        Ok(NoiseParams::zero())
    } else {
        gain_to_sigmas(&cfg.noise.curve, gain)
    }
}

/// Burst for scene `k`. The noise seed does not depend on the gain, so the
/// bursts at different gains share one realization scaled by their sigmas.
pub fn eval_burst<T: Real>(cfg: &ExperimentConfig, scene: &Scene, k: u64, gain: f64, task: Task, burst_size: usize) -> Result<BurstSample<T>> {
    let noise = noise_for_gain(cfg, gain)?;
    let seed = derive_seed(cfg.eval.seed, &[tag::BURST, k]);
    make_burst_with(scene, task, burst_size, &noise, seed, &cfg.train.selection, cfg.noise.clip)
}

/// Prediction on one burst: rendered target and depth maps from the noisy
/// and the clean inputs.
pub struct Prediction<T> {
    pub image: ndarray::Array3<T>,
    pub depth: DepthMap<T>,
    pub clean_depth: DepthMap<T>,
}

pub fn predict<T: Real>(model: &GaussianModel<T>, burst: &BurstSample<T>, cfg: &ExperimentConfig) -> Result<Prediction<T>> {
    let input = ModelInput::new(burst.noisy.clone(), &burst.input_views, model.config.encoding)?;
    let cloud = model.predict_gaussians(&input)?;
    let out = render_view(&cloud, &burst.target_view, &cfg.render)?;
    let clean_cloud = model.predict_gaussians(&input.with_images(burst.clean.clone())?)?;
    let clean_out = render_view(&clean_cloud, &burst.target_view, &cfg.render)?;
    Ok(Prediction { depth: depth_map(&out), clean_depth: depth_map(&clean_out), image: out.color })
}

pub fn evaluate_burst<T: Real>(model: &GaussianModel<T>, burst: &BurstSample<T>, cfg: &ExperimentConfig, scene: u64) -> Result<SceneMetrics> {
    let pred = predict(model, burst, cfg)?;
    let mask = &pred.clean_depth.valid & &pred.clean_depth.depth.mapv(|d| d > T::zero());
    let extractor = GradientPyramid { levels: cfg.loss.perceptual_levels };
    Ok(SceneMetrics {
        scene,
        psnr: psnr(pred.image.view(), burst.target.view(), 1.0)?,
        ssim: ssim(pred.image.view(), burst.target.view())?,
        depth_abs_rel: depth_abs_rel(pred.depth.depth.view(), pred.clean_depth.depth.view(), mask.view())?,
        pyramid_distance: perceptual_loss(pred.image.view(), burst.target.view(), &extractor)?.to64(),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Metrics over `scenes` for every gain in `gains`, in order.
pub fn gain_sweep<T: Real>(
    model: &GaussianModel<T>,
    scenes: &[Scene],
    gains: &[f64],
    task: Task,
    burst_size: usize,
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::UndefinedMetric("no evaluation scenes".into()));
    }
    let mut out = Vec::with_capacity(gains.len());
    for &gain in gains {
        let noise = noise_for_gain(cfg, gain)?;
        let per: Vec<SceneMetrics> = scenes
            .iter()
            .enumerate()
            .map(|(k, scene)| {
                let burst = eval_burst::<T>(cfg, scene, k as u64, gain, task, burst_size)?;
                evaluate_burst(model, &burst, cfg, k as u64)
            })
            .collect::<Result<_>>()?;
        out.push(GainMetrics {
            gain,
            sigma_r: noise.sigma_r,
            sigma_s: noise.sigma_s,
            psnr: mean(per.iter().filter(|m| !m.psnr.is_infinite()).map(|m| m.psnr.value())),
            infinite_psnr_scenes: per.iter().filter(|m| m.psnr.is_infinite()).count(),
            ssim: mean(per.iter().map(|m| m.ssim)),
            depth_abs_rel: mean(per.iter().map(|m| m.depth_abs_rel)),
            pyramid_distance: mean(per.iter().map(|m| m.pyramid_distance)),
            scenes: per,
        });
    }
    Ok(EvalReport {
        task,
        burst_size,
        color_space: "srgb".into(),
        mean_psnr: mean(out.iter().map(|g| g.psnr)),
        mean_ssim: mean(out.iter().map(|g| g.ssim)),
        mean_depth_abs_rel: mean(out.iter().map(|g| g.depth_abs_rel)),
        gains: out,
        fps: None,
        config: cfg.clone(),
    })
}

/// `"<cpu model> (<n> threads, <arch>/<os>)"`.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{cpu} ({threads} threads, {}/{})", std::env::consts::ARCH, std::env::consts::OS)
}

/// Median frames per second of predict + render on one burst, after one
/// untimed warm-up pass.
pub fn bench_fps<T: Real>(model: &GaussianModel<T>, burst: &BurstSample<T>, cfg: &ExperimentConfig, trials: usize) -> Result<FpsReport> {
    if trials == 0 {
        return Err(Error::Config("bench needs at least one trial".into()));
    }
    let run = || -> Result<()> {
        let input = ModelInput::new(burst.noisy.clone(), &burst.input_views, model.config.encoding)?;
        let cloud = model.predict_gaussians(&input)?;
        std::hint::black_box(render_view(&cloud, &burst.target_view, &cfg.render)?);
        Ok(())
    };
    run()?;
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = if trials % 2 == 1 { times[trials / 2] } else { 0.5 * (times[trials / 2 - 1] + times[trials / 2]) };
    Ok(FpsReport {
        fps: 1.0 / median,
        median_seconds: median,
        trials,
        burst_size: burst.burst_size(),
        height: model.height,
        width: model.width,
        hardware: hardware_descriptor(),
    })
}

/// `log(1 + |F|)` of one channel with DC moved to `(h/2, w/2)`, scaled to
/// `[0, 1]` by its maximum.
pub fn export_spectrum<T: Real>(image: ArrayView3<T>, channel: usize) -> Result<Array2<f64>> {
    let (h, w, ch) = image.dim();
    if channel >= ch {
        return Err(Error::Shape(format!("channel {channel} of a {ch}-channel image")));
    }
    let plane = image.slice(ndarray::s![.., .., channel..channel + 1]).mapv(|v| v.to64());
    let f = dft2(plane.view());
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[(y + h / 2) % h, (x + w / 2) % w]] = f[[y, x, 0]].norm().ln_1p();
        }
    }
    let max = out.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        out.mapv_inplace(|v| v / max);
    }
    Ok(out)
}

pub fn write_spectrum<T: Real>(path: &Path, image: ArrayView3<T>, channel: usize) -> Result<()> {
    write_gray_png(path, export_spectrum(image, channel)?.view())
}
