//! Experiment configuration: one TOML document with `seed`, `[model]`,
//! `[render]`, `[noise]`, `[loss]`, `[train]`, `[scene]` and `[eval]`.
//! Missing keys take their defaults and unknown keys are rejected. Dotted
//! overrides such as `train.total_iters=200` are applied on top.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::noise::{GainCurve, NoiseWindow};
use crate::render::RenderSettings;
use crate::scene::{SceneConfig, Selection, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub curve: GainCurve,
    pub window: NoiseWindow,
    /// Clip noisy linear values to `[0, 1]` before delinearizing.
    pub clip: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { curve: GainCurve::default(), window: NoiseWindow::default(), clip: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Levels of the default perceptual feature pyramid.
    pub perceptual_levels: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), perceptual_levels: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Linear learning-rate warm-up length, iterations.
    pub lr_warmup_iters: u64,
    /// Final learning rate of the cosine decay as a fraction of `lr`.
    pub min_lr_ratio: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            lr_warmup_iters: 200,
            min_lr_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Fraction of `total_iters` before the self-consistency term switches on.
    pub warmup_fraction: f64,
    /// Run the clean branch and add the self-consistency term.
    pub use_gsc: bool,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub burst_size: usize,
    /// Probability of a denoising sample; the rest are novel-view samples.
    pub denoise_fraction: f64,
    /// Scenes held in memory at once.
    pub scene_pool: usize,
    /// The pool is regenerated from new seeds every this many iterations.
    pub pool_refresh: u64,
    pub selection: Selection,
    pub log_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 5000,
            warmup_fraction: 120_000.0 / 375_000.0,
            use_gsc: true,
            optim: OptimConfig::default(),
            batch_size: 1,
            burst_size: 2,
            denoise_fraction: 1.0,
            scene_pool: 64,
            pool_refresh: 1000,
            selection: Selection::default(),
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of the held-out scenes, independent of the training seed.
    pub seed: u64,
    pub scenes: usize,
    /// Gain levels; 0 stands for noise-free inputs.
    pub gains: Vec<f64>,
    pub task: Task,
    pub burst_size: usize,
    pub bench_trials: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 1_000_003, scenes: 20, gains: vec![1.0, 2.0, 4.0, 8.0, 16.0, 20.0], task: Task::Denoise, burst_size: 2, bench_trials: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub render: RenderSettings,
    pub noise: NoiseConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub scene: SceneConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            render: RenderSettings::default(),
            noise: NoiseConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            scene: SceneConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.model.check_image_size(self.scene.height, self.scene.width).map_err(|e| Error::Config(e.to_string()))?;
        self.scene.validate()?;
        self.noise.curve.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.noise.window.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss.weights.validate()?;
        let t = &self.train;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&t.warmup_fraction) {
            return bad(format!("train.warmup_fraction {} outside [0, 1]", t.warmup_fraction));
        }
        if t.burst_size < 2 || t.batch_size == 0 || t.scene_pool == 0 || t.pool_refresh == 0 {
            return bad("train.burst_size must be >= 2 and batch_size, scene_pool, pool_refresh positive".into());
        }
        if !(0.0..=1.0).contains(&t.denoise_fraction) {
            return bad(format!("train.denoise_fraction {} outside [0, 1]", t.denoise_fraction));
        }
        let needed = t.burst_size + usize::from(t.denoise_fraction < 1.0);
        if self.scene.views < needed.max(self.eval.burst_size + usize::from(self.eval.task == Task::Nvs)) {
            return bad(format!("scene.views {} is too small for the configured bursts", self.scene.views));
        }
        let o = &t.optim;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("optimizer settings out of range".into());
        }
        if o.grad_clip < 0.0 || o.weight_decay < 0.0 || !(0.0..=1.0).contains(&o.min_lr_ratio) {
            return bad("grad_clip, weight_decay and min_lr_ratio out of range".into());
        }
        if self.eval.gains.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return bad("eval.gains must be finite and non-negative".into());
        }
        if self.eval.burst_size < 2 || self.eval.bench_trials == 0 {
            return bad("eval.burst_size must be >= 2 and bench_trials positive".into());
        }
        if self.render.eps2d < 0.0 || !(self.render.min_transmittance >= 0.0 && self.render.min_transmittance < 1.0) {
            return bad("render settings out of range".into());
        }
        Ok(())
    }

    /// Parses a TOML document over the defaults and applies `key.path=value`
    /// overrides. Values use TOML syntax; anything unparsable is a string.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut base = toml::Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(doc));
        for o in overrides {
            let (path, value) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.iter().any(|k| k.is_empty()) {
                return Err(Error::Config(format!("bad override key {path:?}")));
            }
            let mut slot = &mut base;
            for k in &keys[..keys.len() - 1] {
                let table = slot.as_table_mut().ok_or_else(|| Error::Config(format!("{path}: {k} is not a table")))?;
                slot = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
            let table = slot.as_table_mut().ok_or_else(|| Error::Config(format!("{path} does not name a key")))?;
            table.insert(keys[keys.len() - 1].to_string(), parse_value(value.trim()));
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
