use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use denoisegs::checkpoint::load_checkpoint;
use denoisegs::config::ExperimentConfig;
use denoisegs::eval::{bench_fps, eval_burst, eval_scenes, gain_sweep, predict, write_spectrum};
use denoisegs::io::{read_png, write_pfm, write_png};
use denoisegs::model::GaussianModel;
use denoisegs::noise::NoiseParams;
use denoisegs::rng::{derive_seed, tag};
use denoisegs::scene::{generate_synthetic_scene, load_burst, load_scene, make_burst_with, save_burst, save_scene, Task};
use denoisegs::train::{train_until, TrainState};
use denoisegs::{Error, Real};

#[derive(Parser, Debug)]
#[command(name = "denoisegs", version, about = "Burst denoising and novel view synthesis with per-pixel Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML). Unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config override as dotted.key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Denoise,
    Nvs,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Denoise => Task::Denoise,
            TaskArg::Nvs => Task::Nvs,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes into <out>/scene_NNN.
    GenScenes {
        #[command(flatten)]
        common: Common,
        /// Number of scenes.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Draw a noisy burst from a scene directory at one gain level.
    AddNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Gain level; 0 gives noise-free inputs.
        #[arg(long, default_value_t = 8.0)]
        gain: f64,
        #[arg(long, value_enum, default_value = "denoise")]
        task: TaskArg,
        #[arg(long, default_value_t = 2)]
        burst_size: usize,
    },
    /// Train a model; writes metrics.jsonl and checkpoints into <out>.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint; its config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Denoise a burst; writes denoised.png and depth.pfm.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        burst: PathBuf,
    },
    /// Render a burst's held-out target view; writes novel_view.png and depth.pfm.
    Nvs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        burst: PathBuf,
    },
    /// Sweep the configured gains over held-out scenes; writes report.json and per_scene.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Time predict plus render; writes bench.json.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to time; a freshly initialized model when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        burst_size: usize,
        /// Timed trials; eval.bench_trials when omitted.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write the centered log-magnitude spectrum of one image channel.
    Spectra {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
}

fn load_config(c: &Common) -> denoisegs::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p, &c.set)?,
        None => ExperimentConfig::from_toml_str("", &c.set)?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// The checkpoint fixes the architecture and image size; everything else
/// comes from the command line config.
fn load_model(path: &Path, cfg: &mut ExperimentConfig) -> denoisegs::Result<GaussianModel<f32>> {
    let (saved, state) = load_checkpoint::<f32>(path)?;
    cfg.model = saved.model;
    cfg.scene.height = state.model.height;
    cfg.scene.width = state.model.width;
    Ok(state.model)
}

fn run_model(common: &Common, ckpt: &Path, burst: &Path, image_name: &str) -> denoisegs::Result<()> {
    let mut cfg = load_config(common)?;
    let model = load_model(ckpt, &mut cfg)?;
    let burst = load_burst::<f32>(burst)?;
    let pred = predict(&model, &burst, &cfg)?;
    std::fs::create_dir_all(&common.out)?;
    write_png(&common.out.join(image_name), pred.image.view())?;
    write_pfm(&common.out.join("depth.pfm"), pred.depth.depth.view())?;
    println!("wrote {}", common.out.join(image_name).display());
    Ok(())
}

fn train_cmd<T: Real>(common: &Common, resume: Option<&Path>) -> denoisegs::Result<()> {
    let (cfg, mut state) = match resume {
        Some(p) => load_checkpoint::<T>(p)?,
        None => {
            let cfg = load_config(common)?;
            let state = TrainState::<T>::new(&cfg)?;
            (cfg, state)
        }
    };
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.toml"), cfg.to_toml_string()?)?;
    train_until(&mut state, &cfg, cfg.train.total_iters, Some(&common.out))?;
    if let Some(last) = state.history.last() {
        println!("iteration {} total {:.6} mse {:.6}", state.iteration, last.total, last.mse);
    }
    Ok(())
}

fn run(cmd: Command) -> denoisegs::Result<()> {
    match cmd {
        Command::GenScenes { common, count } => {
            let cfg = load_config(&common)?;
            for k in 0..count {
                let scene = generate_synthetic_scene(&cfg.scene, derive_seed(cfg.seed, &[tag::SCENE, k as u64]))?;
                save_scene(&scene, &common.out.join(format!("scene_{k:03}")))?;
            }
            println!("wrote {count} scenes to {}", common.out.display());
        }
        Command::AddNoise { common, scene, gain, task, burst_size } => {
            let cfg = load_config(&common)?;
            let scene = load_scene(&scene)?;
            let noise = if gain == 0.0 { NoiseParams::zero() } else { denoisegs::noise::gain_to_sigmas(&cfg.noise.curve, gain)? };
            let seed = derive_seed(cfg.seed, &[tag::BURST]);
            let burst = make_burst_with::<f64>(&scene, task.into(), burst_size, &noise, seed, &cfg.train.selection, cfg.noise.clip)?;
            save_burst(&burst, &common.out)?;
            println!("wrote burst (sigma_r {:.5}, sigma_s {:.5}) to {}", noise.sigma_r, noise.sigma_s, common.out.display());
        }
        Command::Train { common, resume, precision } => match precision {
            Precision::F32 => train_cmd::<f32>(&common, resume.as_deref())?,
            Precision::F64 => train_cmd::<f64>(&common, resume.as_deref())?,
        },
        Command::Denoise { common, ckpt, burst } => run_model(&common, &ckpt, &burst, "denoised.png")?,
        Command::Nvs { common, ckpt, burst } => run_model(&common, &ckpt, &burst, "novel_view.png")?,
        Command::Evaluate { common, ckpt } => {
            let mut cfg = load_config(&common)?;
            let model = load_model(&ckpt, &mut cfg)?;
            let scenes = eval_scenes(&cfg)?;
            let report = gain_sweep(&model, &scenes, &cfg.eval.gains, cfg.eval.task, cfg.eval.burst_size, &cfg)?;
            report.save(&common.out)?;
            for g in &report.gains {
                println!("gain {:>5}: psnr {:.3} dB  ssim {:.4}  depth_abs_rel {:.4}", g.gain, g.psnr, g.ssim, g.depth_abs_rel);
            }
        }
        Command::Bench { common, ckpt, burst_size, trials } => {
            let mut cfg = load_config(&common)?;
            let model = match ckpt {
                Some(p) => load_model(&p, &mut cfg)?,
                None => GaussianModel::new(cfg.model.clone(), cfg.scene.height, cfg.scene.width, cfg.seed)?,
            };
            let scene = generate_synthetic_scene(&cfg.scene, derive_seed(cfg.seed, &[tag::BENCH]))?;
            let burst = eval_burst::<f32>(&cfg, &scene, 0, 8.0, Task::Denoise, burst_size)?;
            let report = bench_fps(&model, &burst, &cfg, trials.unwrap_or(cfg.eval.bench_trials))?;
            std::fs::create_dir_all(&common.out)?;
            std::fs::write(common.out.join("bench.json"), serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
            println!("{:.2} fps (median {:.4} s over {} trials, V={}) on {}", report.fps, report.median_seconds, report.trials, burst_size, report.hardware);
        }
        Command::Spectra { common, image, channel } => {
            let img = read_png::<f64>(&image)?;
            let path = common.out.join(format!("spectrum_c{channel}.png"));
            std::fs::create_dir_all(&common.out)?;
            write_spectrum(&path, img.view(), channel)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Load { .. } | Error::Contract(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
