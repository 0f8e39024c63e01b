//! Dual-branch training.
//!
//! Each step predicts a cloud from the noisy inputs, renders the target and
//! compares it with the clean target. Once the warm-up is over, the same
//! network also runs on the clean inputs; only its depths are used, as
//! constants, by the self-consistency term. Training data for iteration `i`
//! is a pure function of `(seed, i)`, so resuming from a checkpoint replays
//! exactly the batches a straight run would have seen.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::cloud::CloudGrad;
use crate::config::{ExperimentConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, GradientPyramid, LossReport};
use crate::model::{GaussianModel, ModelInput, Weights};
use crate::noise::sample_train_noise;
use crate::optim::{learning_rate, Adam};
use crate::render::render_view_with_tape;
use crate::rng::{derive_seed, stream, tag};
use crate::scalar::Real;
use crate::scene::{generate_synthetic_scene, make_burst_with, BurstSample, Scene, Task};

/// First iteration at which the self-consistency term is active:
/// `⌈warmup_fraction · total_iters⌉`. Products within 1e-9 of an integer are
/// snapped to it so that e.g. `0.32 · 375000` gives exactly 120000.
pub fn gsc_boundary(cfg: &TrainConfig) -> u64 {
    let x = cfg.warmup_fraction * cfg.total_iters as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

pub fn gsc_active(iter: u64, cfg: &TrainConfig) -> bool {
    iter >= gsc_boundary(cfg)
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: u64,
    pub mse: f64,
    pub perceptual: f64,
    pub gsc: f64,
    pub lwf: f64,
    pub total: f64,
    pub gsc_active: bool,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: GaussianModel<T>,
    pub adam: Adam<T>,
    /// Number of completed steps.
    pub iteration: u64,
    pub history: Vec<StepRecord>,
    /// How many clean-branch forward passes have run.
    pub clean_branch_runs: u64,
}

impl<T: Real> TrainState<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let model = GaussianModel::new(cfg.model.clone(), cfg.scene.height, cfg.scene.width, cfg.seed)?;
        let adam = Adam::new(&model.weights);
        Ok(Self { model, adam, iteration: 0, history: Vec::new(), clean_branch_runs: 0 })
    }
}

/// Infinite stream of training bursts. A pool of scenes is regenerated from
/// fresh seeds every `pool_refresh` iterations.
pub struct TrainData {
    cfg: ExperimentConfig,
    generation: Option<u64>,
    pool: Vec<Scene>,
}

impl TrainData {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { cfg: cfg.clone(), generation: None, pool: Vec::new() }
    }

    fn ensure_pool(&mut self, iter: u64) -> Result<()> {
        let t = &self.cfg.train;
        let generation = iter / t.pool_refresh;
        if self.generation != Some(generation) {
            self.pool = (0..t.scene_pool)
                .map(|k| generate_synthetic_scene(&self.cfg.scene, derive_seed(self.cfg.seed, &[tag::TRAIN_DATA, generation, k as u64])))
                .collect::<Result<_>>()?;
            self.generation = Some(generation);
        }
        Ok(())
    }

    pub fn batch<T: Real>(&mut self, iter: u64) -> Result<Vec<BurstSample<T>>> {
        self.ensure_pool(iter)?;
        let cfg = &self.cfg;
        (0..cfg.train.batch_size)
            .map(|b| {
                let s = derive_seed(cfg.seed, &[tag::TRAIN_NOISE, iter, b as u64]);
                let mut rng = stream(s, &[]);
                let scene = &self.pool[rng.random_range(0..self.pool.len())];
                let task = if rng.random::<f64>() < cfg.train.denoise_fraction { Task::Denoise } else { Task::Nvs };
                let noise = sample_train_noise(&cfg.noise.window, s)?;
                make_burst_with(scene, task, cfg.train.burst_size, &noise, s, &cfg.train.selection, cfg.noise.clip)
            })
            .collect()
    }
}

pub fn model_input<T: Real>(model: &GaussianModel<T>, images: Vec<ndarray::Array3<T>>, burst: &BurstSample<T>) -> Result<ModelInput<T>> {
    ModelInput::new(images, &burst.input_views, model.config.encoding)
}

pub struct StepOutcome {
    pub report: LossReport,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Loss report and weight gradient for one batch, without touching `state`.
pub fn batch_gradient<T: Real>(
    state: &TrainState<T>,
    batch: &[BurstSample<T>],
    cfg: &ExperimentConfig,
    extractor: &GradientPyramid,
    clean_runs: &mut u64,
) -> Result<(LossReport, Weights<T>)> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let model = &state.model;
    let active = gsc_active(state.iteration, &cfg.train);
    let run_clean = active && cfg.train.use_gsc && cfg.loss.weights.gsc > 0.0;
    let mut grads = model.weights.zeros_like();
    let mut sums = [0.0f64; 5];
    for burst in batch {
        burst.validate()?;
        let input = model_input(model, burst.noisy.clone(), burst)?;
        let (cloud, cache) = model.forward_with_cache(&input)?;
        let guidance = if run_clean {
            *clean_runs += 1;
            Some(model.forward_clean_branch(&input.with_images(burst.clean.clone())?)?)
        } else {
            None
        };
        let (out, tape) = render_view_with_tape(&cloud, &burst.target_view, &cfg.render)?;
        let lg = total_loss_grad(out.color.view(), burst.target.view(), &cloud, guidance.as_ref(), &cfg.loss.weights, run_clean, extractor, true)?;
        if !lg.report.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at iteration {} on scene {}: {:?}",
                state.iteration, burst.scene_id, lg.report
            )));
        }
        let image_grad = lg.image.expect("gradient requested");
        let cloud_grad: CloudGrad<T> = tape.backward(&cloud, &burst.target_view, image_grad.view())?;
        model.backward(&cache, &cloud, &cloud_grad, lg.depths.as_deref(), &mut grads)?;
        let r = lg.report;
        for (s, v) in sums.iter_mut().zip([r.mse, r.perceptual, r.gsc, r.lwf, r.total]) {
            *s += v;
        }
    }
    let n = batch.len() as f64;
    grads.scale(T::of(1.0 / n));
    let [mse, perceptual, gsc, lwf, total] = sums.map(|s| s / n);
    Ok((LossReport { mse, perceptual, gsc, lwf, total, gsc_active: run_clean }, grads))
}

/// One optimizer step. On a non-finite loss or gradient the state is left
/// untouched and an error describing the step is returned.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    batch: &[BurstSample<T>],
    cfg: &ExperimentConfig,
    extractor: &GradientPyramid,
) -> Result<StepOutcome> {
    let mut clean_runs = state.clean_branch_runs;
    let (report, mut grads) = batch_gradient(state, batch, cfg, extractor, &mut clean_runs)?;
    let grad_norm = Adam::clip(&mut grads, cfg.train.optim.grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm at iteration {}: {grad_norm}", state.iteration)));
    }
    let lr = learning_rate(&cfg.train.optim, state.iteration, cfg.train.total_iters);
    state.adam.update(&mut state.model.weights, &grads, &cfg.train.optim, lr);
    state.clean_branch_runs = clean_runs;
    state.iteration += 1;
    Ok(StepOutcome { report, grad_norm, lr })
}

/// Runs until `until` completed steps (at most `total_iters`), appending to
/// the history. With `out` set, writes `metrics.jsonl` (appending on resume),
/// periodic `ckpt_NNNNNN.bin` and a final `last.bin`.
pub fn train_until<T: Real>(state: &mut TrainState<T>, cfg: &ExperimentConfig, until: u64, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let until = until.min(cfg.train.total_iters);
    let extractor = GradientPyramid { levels: cfg.loss.perceptual_levels };
    let mut data = TrainData::new(cfg);
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("metrics.jsonl");
            let file = if state.iteration == 0 { File::create(&path)? } else { fs::OpenOptions::new().create(true).append(true).open(&path)? };
            Some(BufWriter::new(file))
        }
        None => None,
    };
    while state.iteration < until {
        let iter = state.iteration;
        let batch = data.batch::<T>(iter)?;
        let step = train_step(state, &batch, cfg, &extractor)?;
        let r = step.report;
        let rec = StepRecord {
            iter,
            mse: r.mse,
            perceptual: r.perceptual,
            gsc: r.gsc,
            lwf: r.lwf,
            total: r.total,
            gsc_active: r.gsc_active,
            lr: step.lr,
            grad_norm: step.grad_norm,
        };
        state.history.push(rec);
        if let Some(w) = log.as_mut() {
            if cfg.train.log_every > 0 && iter % cfg.train.log_every == 0 {
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
            }
        }
        if let Some(dir) = out {
            let every = cfg.train.checkpoint_every;
            if every > 0 && state.iteration % every == 0 {
                save_checkpoint(&dir.join(format!("ckpt_{:06}.bin", state.iteration)), state, cfg)?;
            }
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(dir) = out {
        save_checkpoint(&dir.join("last.bin"), state, cfg)?;
    }
    Ok(())
}

pub fn train<T: Real>(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainState<T>> {
    let mut state = TrainState::new(cfg)?;
    train_until(&mut state, cfg, cfg.train.total_iters, out)?;
    Ok(state)
}
