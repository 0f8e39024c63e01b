//! Feed-forward per-pixel Gaussian predictor.
//!
//! Every input view is concatenated with its six ray-encoding channels, cut
//! into `p×p` patches and linearly embedded. A learned per-patch position
//! embedding is shared by all views, so tokens of different views are only
//! told apart by their content and rays. Pre-norm transformer blocks attend
//! globally across every token of the burst; a linear head then emits
//! `p·p·12` raw values per token, one 12-vector per pixel:
//!
//! ```text
//! [ depth | scale (3) | rotation (4) | opacity | color (3) ]
//! ```

pub mod layers;

use ndarray::{s, Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::camera::{encode, rays_for_view, CameraView, EncodingKind, RayBundle, RayEncoding};
use crate::cloud::{CloudGrad, CloudRole, GaussianCloud, PixelLayout};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::rng::{stream, tag};
use crate::scalar::{sigmoid, Real};
use layers::{normal_matrix, Block, BlockCache, LayerNorm, LayerNormCache, Linear};

/// Channels per input pixel: RGB plus the ray encoding.
pub const IN_CHANNELS: usize = 9;
/// Raw head outputs per pixel.
pub const OUT_CHANNELS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// Depth range along each pixel ray, world units.
    pub near: f64,
    pub far: f64,
    pub encoding: EncodingKind,
    /// Clamp range for per-axis scales, world units.
    pub scale_range: [f64; 2],
    /// Scale emitted for a zero logit.
    pub scale_init: f64,
    /// Learned per-view embedding. Breaks equivariance to input view order.
    pub view_embedding: bool,
    pub max_views: usize,
    /// Adds the input pixel's logit to the color head.
    pub color_skip: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 64,
            num_blocks: 4,
            num_heads: 4,
            mlp_ratio: 4,
            near: 1.0,
            far: 12.0,
            encoding: EncodingKind::Rppc,
            scale_range: [1e-3, 1.0],
            scale_init: 0.06,
            view_embedding: false,
            max_views: 8,
            color_skip: false,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.embed_dim == 0 || self.num_heads == 0 || self.mlp_ratio == 0 || self.max_views == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return bad(format!("embed_dim {} is not divisible by num_heads {}", self.embed_dim, self.num_heads));
        }
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return bad(format!("depth range [{}, {}] must satisfy 0 < near < far", self.near, self.far));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("scale range {:?} must satisfy 0 < min < max", self.scale_range));
        }
        if !(self.scale_init > 0.0 && self.init_std > 0.0) {
            return bad("scale_init and init_std must be positive".into());
        }
        Ok(())
    }

    pub fn check_image_size(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || height % self.patch_size != 0 || width % self.patch_size != 0 {
            return Err(Error::Shape(format!("patch size {} does not divide {height}x{width}", self.patch_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub embed: Linear<T>,
    /// `patches × embed_dim`, shared across views.
    pub pos: Array2<T>,
    pub view: Option<Array2<T>>,
    pub blocks: Vec<Block<T>>,
    pub ln_f: LayerNorm<T>,
    pub head: Linear<T>,
}

/// Name, shape and flat contents of one weight tensor.
pub type TensorRef<'a, T> = (String, Vec<usize>, &'a [T]);

impl<T: Real> Weights<T> {
    fn init(config: &ModelConfig, patches: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[tag::INIT]);
        let d = config.embed_dim;
        let p2 = config.patch_size * config.patch_size;
        let std = config.init_std;
        let out_std = std / (2.0 * config.num_blocks.max(1) as f64).sqrt();
        let embed = Linear::new(&mut rng, p2 * IN_CHANNELS, d, std);
        let pos = normal_matrix(&mut rng, patches, d, std);
        let view = config.view_embedding.then(|| normal_matrix(&mut rng, config.max_views, d, std));
        let blocks = (0..config.num_blocks).map(|_| Block::new(&mut rng, d, d * config.mlp_ratio, std, out_std)).collect();
        let head = Linear::new(&mut rng, d, p2 * OUT_CHANNELS, std);
        Self { embed, pos, view, blocks, ln_f: LayerNorm::new(d), head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embed: self.embed.zeros_like(),
            pos: Array2::zeros(self.pos.raw_dim()),
            view: self.view.as_ref().map(|v| Array2::zeros(v.raw_dim())),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            ln_f: self.ln_f.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        fn push<'a, T: Real, D: ndarray::Dimension>(out: &mut Vec<TensorRef<'a, T>>, name: String, a: &'a ndarray::Array<T, D>) {
            out.push((name, a.shape().to_vec(), a.as_slice().expect("standard layout")));
        }
        let mut out = Vec::new();
        push(&mut out, "embed.w".into(), &self.embed.w);
        push(&mut out, "embed.b".into(), &self.embed.b);
        push(&mut out, "pos".into(), &self.pos);
        if let Some(v) = &self.view {
            push(&mut out, "view".into(), v);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            push(&mut out, format!("blocks.{i}.ln1.gamma"), &b.ln1.gamma);
            push(&mut out, format!("blocks.{i}.ln1.beta"), &b.ln1.beta);
            push(&mut out, format!("blocks.{i}.attn.qkv.w"), &b.attn.qkv.w);
            push(&mut out, format!("blocks.{i}.attn.qkv.b"), &b.attn.qkv.b);
            push(&mut out, format!("blocks.{i}.attn.proj.w"), &b.attn.proj.w);
            push(&mut out, format!("blocks.{i}.attn.proj.b"), &b.attn.proj.b);
            push(&mut out, format!("blocks.{i}.ln2.gamma"), &b.ln2.gamma);
            push(&mut out, format!("blocks.{i}.ln2.beta"), &b.ln2.beta);
            push(&mut out, format!("blocks.{i}.fc1.w"), &b.fc1.w);
            push(&mut out, format!("blocks.{i}.fc1.b"), &b.fc1.b);
            push(&mut out, format!("blocks.{i}.fc2.w"), &b.fc2.w);
            push(&mut out, format!("blocks.{i}.fc2.b"), &b.fc2.b);
        }
        push(&mut out, "ln_f.gamma".into(), &self.ln_f.gamma);
        push(&mut out, "ln_f.beta".into(), &self.ln_f.beta);
        push(&mut out, "head.w".into(), &self.head.w);
        push(&mut out, "head.b".into(), &self.head.b);
        out
    }

    /// Mutable flat views in the same order as [`Weights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        fn sl<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out: Vec<&mut [T]> = vec![sl(&mut self.embed.w), sl(&mut self.embed.b), sl(&mut self.pos)];
        if let Some(v) = &mut self.view {
            out.push(sl(v));
        }
        for b in &mut self.blocks {
            out.push(sl(&mut b.ln1.gamma));
            out.push(sl(&mut b.ln1.beta));
            out.push(sl(&mut b.attn.qkv.w));
            out.push(sl(&mut b.attn.qkv.b));
            out.push(sl(&mut b.attn.proj.w));
            out.push(sl(&mut b.attn.proj.b));
            out.push(sl(&mut b.ln2.gamma));
            out.push(sl(&mut b.ln2.beta));
            out.push(sl(&mut b.fc1.w));
            out.push(sl(&mut b.fc1.b));
            out.push(sl(&mut b.fc2.w));
            out.push(sl(&mut b.fc2.b));
        }
        out.push(sl(&mut self.ln_f.gamma));
        out.push(sl(&mut self.ln_f.beta));
        out.push(sl(&mut self.head.w));
        out.push(sl(&mut self.head.b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        let src: Vec<Vec<T>> = other.tensors().into_iter().map(|t| t.2.to_vec()).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|v| v.to64() * v.to64()).sum()
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        let mut out = Weights::<U> {
            embed: Linear { w: self.embed.w.mapv(|v| U::of(v.to64())), b: self.embed.b.mapv(|v| U::of(v.to64())) },
            pos: Array2::zeros(self.pos.raw_dim()),
            view: self.view.as_ref().map(|v| Array2::zeros(v.raw_dim())),
            blocks: Vec::new(),
            ln_f: LayerNorm::new(self.ln_f.gamma.len()),
            head: Linear { w: Array2::zeros(self.head.w.raw_dim()), b: Array1::zeros(self.head.b.raw_dim()) },
        };
        let d = self.embed.w.ncols();
        let hidden = self.blocks.first().map_or(0, |b| b.fc1.w.ncols());
        let zero_block = || layers::Block::<U> {
            ln1: LayerNorm::new(d),
            attn: layers::Attention {
                qkv: Linear { w: Array2::zeros((d, 3 * d)), b: Array1::zeros(3 * d) },
                proj: Linear { w: Array2::zeros((d, d)), b: Array1::zeros(d) },
            },
            ln2: LayerNorm::new(d),
            fc1: Linear { w: Array2::zeros((d, hidden)), b: Array1::zeros(hidden) },
            fc2: Linear { w: Array2::zeros((hidden, d)), b: Array1::zeros(d) },
        };
        out.blocks = (0..self.blocks.len()).map(|_| zero_block()).collect();
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (a, b) in dst.iter_mut().zip(src.2) {
                *a = U::of(b.to64());
            }
        }
        out
    }
}

/// Images plus per-view rays and encodings, checked for alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    /// sRGB images `H×W×3` in `[0, 1]`.
    pub images: Vec<Array3<T>>,
    pub rays: Vec<RayBundle<T>>,
    pub encodings: Vec<RayEncoding<T>>,
}

impl<T: Real> ModelInput<T> {
    pub fn new(images: Vec<Array3<T>>, views: &[CameraView<T>], kind: EncodingKind) -> Result<Self> {
        if views.len() != images.len() {
            return Err(Error::Shape(format!("{} images for {} views", images.len(), views.len())));
        }
        let rays = views.iter().map(rays_for_view).collect::<Result<Vec<_>>>()?;
        let encodings = rays.iter().map(|r| encode(r, kind)).collect();
        Self::from_parts(images, rays, encodings)
    }

    pub fn from_parts(images: Vec<Array3<T>>, rays: Vec<RayBundle<T>>, encodings: Vec<RayEncoding<T>>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Shape("no input views".into()))?;
        let (h, w, _) = first.dim();
        if rays.len() != images.len() || encodings.len() != images.len() {
            return Err(Error::Shape("images, rays and encodings differ in count".into()));
        }
        for ((img, r), e) in images.iter().zip(&rays).zip(&encodings) {
            if img.dim() != (h, w, 3) || r.height() != h || r.width() != w || e.channels.dim() != (h, w, 6) {
                return Err(Error::Shape(format!("every view must be {h}x{w}")));
            }
        }
        Ok(Self { images, rays, encodings })
    }

    pub fn views(&self) -> usize {
        self.images.len()
    }

    pub fn height(&self) -> usize {
        self.images[0].dim().0
    }

    pub fn width(&self) -> usize {
        self.images[0].dim().1
    }

    /// Same rays and encodings with different images (the clean branch).
    pub fn with_images(&self, images: Vec<Array3<T>>) -> Result<Self> {
        Self::from_parts(images, self.rays.clone(), self.encodings.clone())
    }
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    views: usize,
    tokens: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    ln_f: LayerNormCache<T>,
    features: Array2<T>,
    raw: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel<T> {
    pub config: ModelConfig,
    pub height: usize,
    pub width: usize,
    pub weights: Weights<T>,
}

fn logit<T: Real>(c: T) -> T {
    let e = T::of(1e-3);
    let c = c.max(e).min(T::one() - e);
    (c / (T::one() - c)).ln()
}

impl<T: Real> GaussianModel<T> {
    pub fn new(config: ModelConfig, height: usize, width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        config.check_image_size(height, width)?;
        let patches = (height / config.patch_size) * (width / config.patch_size);
        let weights = Weights::init(&config, patches, seed);
        Ok(Self { config, height, width, weights })
    }

    pub fn patches_per_view(&self) -> usize {
        (self.height / self.config.patch_size) * (self.width / self.config.patch_size)
    }

    pub fn cast<U: Real>(&self) -> GaussianModel<U> {
        GaussianModel { config: self.config.clone(), height: self.height, width: self.width, weights: self.weights.cast() }
    }

    fn check_input(&self, input: &ModelInput<T>) -> Result<()> {
        if input.height() != self.height || input.width() != self.width {
            return Err(Error::Shape(format!(
                "model expects {}x{} views, got {}x{}",
                self.height,
                self.width,
                input.height(),
                input.width()
            )));
        }
        if input.encodings.iter().any(|e| e.kind != self.config.encoding) {
            return Err(Error::Shape("ray encoding kind differs from the model's".into()));
        }
        if self.weights.view.is_some() && input.views() > self.config.max_views {
            return Err(Error::Shape(format!("{} views exceed max_views {}", input.views(), self.config.max_views)));
        }
        Ok(())
    }

    fn patchify(&self, input: &ModelInput<T>) -> Array2<T> {
        let p = self.config.patch_size;
        let wp = self.width / p;
        let np = self.patches_per_view();
        let mut x = Array2::zeros((input.views() * np, p * p * IN_CHANNELS));
        let two = T::of(2.0);
        for (v, (img, enc)) in input.images.iter().zip(&input.encodings).enumerate() {
            for t in 0..np {
                let (py, px) = (t / wp, t % wp);
                let mut row = x.row_mut(v * np + t);
                for dy in 0..p {
                    for dx in 0..p {
                        let (y, xx) = (py * p + dy, px * p + dx);
                        let base = (dy * p + dx) * IN_CHANNELS;
                        for c in 0..3 {
                            row[base + c] = two * img[[y, xx, c]] - T::one();
                        }
                        for c in 0..6 {
                            row[base + 3 + c] = enc.channels[[y, xx, c]];
                        }
                    }
                }
            }
        }
        x
    }

    fn forward_inner(&self, input: &ModelInput<T>) -> Result<ForwardCache<T>> {
        self.check_input(input)?;
        let heads = self.config.num_heads;
        let np = self.patches_per_view();
        let v = input.views();
        let x0 = self.patchify(input);
        let mut x = self.weights.embed.forward(x0.view());
        for view in 0..v {
            let mut rows = x.slice_mut(s![view * np..(view + 1) * np, ..]);
            rows += &self.weights.pos;
            if let Some(e) = &self.weights.view {
                rows += &e.row(view);
            }
        }
        let mut caches = Vec::with_capacity(self.weights.blocks.len());
        for b in &self.weights.blocks {
            let (y, c) = b.forward(x, heads);
            x = y;
            caches.push(c);
        }
        let (features, ln_f) = self.weights.ln_f.forward(x.view());
        let raw = self.weights.head.forward(features.view());
        Ok(ForwardCache { views: v, tokens: x0, blocks: caches, ln_f, features, raw })
    }

    /// Raw 12-vector of the Gaussian at `(view, y, x)`.
    fn raw_at(&self, raw: &Array2<T>, view: usize, y: usize, x: usize) -> [T; OUT_CHANNELS] {
        let p = self.config.patch_size;
        let wp = self.width / p;
        let n = view * self.patches_per_view() + (y / p) * wp + x / p;
        let base = ((y % p) * p + x % p) * OUT_CHANNELS;
        let row = raw.row(n);
        std::array::from_fn(|k| row[base + k])
    }

    fn decode(&self, cache: &ForwardCache<T>, input: &ModelInput<T>, role: CloudRole) -> Result<GaussianCloud<T>> {
        let (h, w) = (self.height, self.width);
        let c = &self.config;
        let (near, far) = (T::of(c.near), T::of(c.far));
        let (smin, smax) = (T::of(c.scale_range[0]), T::of(c.scale_range[1]));
        let s0 = T::of(c.scale_init);
        let n = cache.views * h * w;
        let mut cloud = GaussianCloud::empty();
        cloud.means.reserve(n);
        let mut depths = Vec::with_capacity(n);
        for v in 0..cache.views {
            for y in 0..h {
                for x in 0..w {
                    let r = self.raw_at(&cache.raw, v, y, x);
                    let depth = near + sigmoid(r[0]) * (far - near);
                    let scale = Vec3::new(r[1], r[2], r[3]).as_array().map(|t| (s0 * t.exp()).max(smin).min(smax));
                    let u = [r[4] + T::one(), r[5], r[6], r[7]];
                    let un = u.iter().map(|a| *a * *a).sum::<T>().sqrt();
                    let q = if un > T::of(1e-12) { u.map(|a| a / un) } else { [T::one(), T::zero(), T::zero(), T::zero()] };
                    let opacity = sigmoid(r[8]);
                    let color = std::array::from_fn::<T, 3, _>(|k| {
                        let skip = if c.color_skip { logit(input.images[v][[y, x, k]]) } else { T::zero() };
                        sigmoid(r[9 + k] + skip)
                    });
                    let mean = input.rays[v].origin(y, x) + input.rays[v].direction(y, x) * depth;
                    cloud.push(mean, Vec3::new(scale[0], scale[1], scale[2]), q, opacity, Vec3::new(color[0], color[1], color[2]));
                    depths.push(depth);
                }
            }
        }
        cloud.layout = Some(PixelLayout::from_rays(&input.rays, depths)?);
        cloud.role = role;
        if cloud.validate().is_err() {
            return Err(Error::NonFinite("model produced non-finite Gaussian parameters".into()));
        }
        Ok(cloud)
    }

    /// One Gaussian per input pixel. Pure function of the weights and input.
    pub fn predict_gaussians(&self, input: &ModelInput<T>) -> Result<GaussianCloud<T>> {
        self.forward_with_cache(input).map(|(c, _)| c)
    }

    /// Same network on clean inputs; the result is flagged as guidance and
    /// carries no activations, so nothing can be backpropagated through it.
    pub fn forward_clean_branch(&self, clean: &ModelInput<T>) -> Result<GaussianCloud<T>> {
        let cache = self.forward_inner(clean)?;
        self.decode(&cache, clean, CloudRole::Guidance)
    }

    pub fn forward_with_cache(&self, input: &ModelInput<T>) -> Result<(GaussianCloud<T>, ForwardCache<T>)> {
        let cache = self.forward_inner(input)?;
        let cloud = self.decode(&cache, input, CloudRole::Primary)?;
        Ok((cloud, cache))
    }

    /// Accumulates into `grads` the weight gradient of a scalar whose
    /// gradient with respect to the predicted cloud is `cloud_grad`, plus an
    /// optional direct gradient on the per-pixel depths.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        cloud: &GaussianCloud<T>,
        cloud_grad: &CloudGrad<T>,
        depth_grad: Option<&[T]>,
        grads: &mut Weights<T>,
    ) -> Result<()> {
        if cloud.role != CloudRole::Primary {
            return Err(Error::Contract("cannot backpropagate through a guidance cloud".into()));
        }
        let layout = cloud.layout.as_ref().ok_or_else(|| Error::Contract("cloud is not pixel-aligned".into()))?;
        let n = cloud.len();
        if cloud_grad.means.len() != n || depth_grad.is_some_and(|d| d.len() != n) {
            return Err(Error::Shape("gradient does not match the cloud".into()));
        }
        let (h, w) = (self.height, self.width);
        let c = &self.config;
        let p = c.patch_size;
        let wp = w / p;
        let np = self.patches_per_view();
        let span = T::of(c.far - c.near);
        let (smin, smax) = (T::of(c.scale_range[0]), T::of(c.scale_range[1]));
        let s0 = T::of(c.scale_init);
        let d_mean = cloud_grad.depth_grads(layout);
        let mut g_raw = Array2::<T>::zeros(cache.raw.raw_dim());
        for v in 0..cache.views {
            for y in 0..h {
                for x in 0..w {
                    let i = v * h * w + y * w + x;
                    let r = self.raw_at(&cache.raw, v, y, x);
                    let row_i = v * np + (y / p) * wp + x / p;
                    let base = ((y % p) * p + x % p) * OUT_CHANNELS;
                    let mut g = [T::zero(); OUT_CHANNELS];
                    let sd = sigmoid(r[0]);
                    let gd = d_mean[i] + depth_grad.map_or(T::zero(), |d| d[i]);
                    g[0] = gd * span * sd * (T::one() - sd);
                    for k in 0..3 {
                        let raw_s = s0 * r[1 + k].exp();
                        if raw_s > smin && raw_s < smax {
                            g[1 + k] = cloud_grad.scales[i][k] * raw_s;
                        }
                    }
                    let u = [r[4] + T::one(), r[5], r[6], r[7]];
                    let un = u.iter().map(|a| *a * *a).sum::<T>().sqrt();
                    if un > T::of(1e-12) {
                        let q = cloud.rotations[i];
                        let gq = cloud_grad.rotations[i];
                        let dot: T = (0..4).map(|k| q[k] * gq[k]).sum();
                        for k in 0..4 {
                            g[4 + k] = (gq[k] - q[k] * dot) / un;
                        }
                    }
                    let a = cloud.opacities[i];
                    g[8] = cloud_grad.opacities[i] * a * (T::one() - a);
                    for k in 0..3 {
                        let col = cloud.colors[i][k];
                        g[9 + k] = cloud_grad.colors[i][k] * col * (T::one() - col);
                    }
                    let mut row = g_raw.row_mut(row_i);
                    for k in 0..OUT_CHANNELS {
                        row[base + k] = g[k];
                    }
                }
            }
        }
        let g_feat = self.weights.head.backward(cache.features.view(), g_raw.view(), &mut grads.head);
        let mut gx = self.weights.ln_f.backward(&cache.ln_f, g_feat.view(), &mut grads.ln_f);
        for (b, (bc, gb)) in self.weights.blocks.iter().zip(cache.blocks.iter().zip(grads.blocks.iter_mut())).rev() {
            gx = b.backward(bc, gx, c.num_heads, gb);
        }
        for v in 0..cache.views {
            let rows = gx.slice(s![v * np..(v + 1) * np, ..]);
            grads.pos += &rows;
            if let Some(ge) = &mut grads.view {
                let mut r = ge.row_mut(v);
                r += &rows.sum_axis(ndarray::Axis(0));
            }
        }
        self.weights.embed.backward_params_only(cache.tokens.view(), gx.view(), &mut grads.embed);
        Ok(())
    }
}
