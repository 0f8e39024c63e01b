//! Burst denoising and noisy-input novel view synthesis with a feed-forward,
//! pixel-aligned Gaussian splatting model.

pub mod camera;
pub mod checkpoint;
pub mod cloud;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod noise;
pub mod optim;
pub mod render;
pub mod rng;
pub mod scene;
pub mod train;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision model, the default for training and inference.
pub type Model = model::GaussianModel<f32>;
/// Double-precision model, used for derivative checks.
pub type Model64 = model::GaussianModel<f64>;
pub type Cloud = cloud::GaussianCloud<f32>;
pub type Cloud64 = cloud::GaussianCloud<f64>;
pub type Burst = scene::BurstSample<f32>;
pub type Burst64 = scene::BurstSample<f64>;
pub type State = train::TrainState<f32>;
pub type State64 = train::TrainState<f64>;
