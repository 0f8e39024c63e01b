//! Dense building blocks with hand-written backward passes. Activations are
//! row-major `tokens × features` matrices.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Real;

pub(crate) fn normal_matrix<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<T> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(n.sample(rng)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `in × out`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(rng: &mut impl Rng, din: usize, dout: usize, std: f64) -> Self {
        Self { w: normal_matrix(rng, din, dout, std), b: Array1::zeros(dout) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<T>, gy: ArrayView2<T>, g: &mut Self) -> Array2<T> {
        g.w += &x.t().dot(&gy);
        g.b += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.t())
    }

    pub fn backward_params_only(&self, x: ArrayView2<T>, gy: ArrayView2<T>, g: &mut Self) {
        g.w += &x.t().dot(&gy);
        g.b += &gy.sum_axis(Axis(0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self { gamma: Array1::ones(d), beta: Array1::zeros(d) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { gamma: Array1::zeros(self.gamma.raw_dim()), beta: Array1::zeros(self.beta.raw_dim()) }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::of(x.ncols() as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| *v * *v).sum::<T>() / d;
            *is = T::one() / (var + eps).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, gy: ArrayView2<T>, g: &mut Self) -> Array2<T> {
        g.gamma += &(&gy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &gy.sum_axis(Axis(0));
        let d = T::of(gy.ncols() as f64);
        let mut gx = &gy * &self.gamma;
        for ((mut row, xh), is) in gx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.inv_std.iter()) {
            let m1 = row.sum() / d;
            let m2 = row.iter().zip(xh.iter()).map(|(a, b)| *a * *b).sum::<T>() / d;
            Zip::from(&mut row).and(&xh).for_each(|r, x| *r = (*r - m1 - *x * m2) * *is);
        }
        gx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

pub fn softmax_rows<T: Real>(s: &mut Array2<T>) {
    for mut row in s.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Multi-head self-attention over all tokens of one burst.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
}

pub struct AttentionCache<T> {
    x: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    merged: Array2<T>,
}

impl<T: Real> Attention<T> {
    pub fn zeros_like(&self) -> Self {
        Self { qkv: self.qkv.zeros_like(), proj: self.proj.zeros_like() }
    }

    pub fn forward(&self, x: ArrayView2<T>, heads: usize) -> (Array2<T>, AttentionCache<T>) {
        let d = x.ncols();
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let mut merged = Array2::zeros((x.nrows(), d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut a = q.dot(&k.t()) * scale;
            softmax_rows(&mut a);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&a.dot(&v));
            probs.push(a);
        }
        let y = self.proj.forward(merged.view());
        (y, AttentionCache { x: x.to_owned(), qkv, probs, merged })
    }

    pub fn backward(&self, cache: &AttentionCache<T>, gy: ArrayView2<T>, heads: usize, g: &mut Self) -> Array2<T> {
        let d = cache.x.ncols();
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let g_merged = self.proj.backward(cache.merged.view(), gy, &mut g.proj);
        let mut g_qkv = Array2::zeros(cache.qkv.raw_dim());
        for h in 0..heads {
            let q = cache.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = cache.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = cache.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let a = &cache.probs[h];
            let go = g_merged.slice(s![.., h * dh..(h + 1) * dh]);
            let ga = go.dot(&v.t());
            let gv = a.t().dot(&go);
            let mut gs = &ga * a;
            for (mut row, arow) in gs.rows_mut().into_iter().zip(a.rows()) {
                let dot = row.sum();
                Zip::from(&mut row).and(&arow).for_each(|r, p| *r = *r - *p * dot);
            }
            gs.mapv_inplace(|v| v * scale);
            g_qkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&gs.dot(&k));
            g_qkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&gs.t().dot(&q));
            g_qkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&gv);
        }
        self.qkv.backward(cache.x.view(), g_qkv.view(), &mut g.qkv)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    h2: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
}

impl<T: Real> Block<T> {
    pub fn new(rng: &mut impl Rng, d: usize, hidden: usize, std: f64, out_std: f64) -> Self {
        Self {
            ln1: LayerNorm::new(d),
            attn: Attention { qkv: Linear::new(rng, d, 3 * d, std), proj: Linear::new(rng, d, d, out_std) },
            ln2: LayerNorm::new(d),
            fc1: Linear::new(rng, d, hidden, std),
            fc2: Linear::new(rng, hidden, d, out_std),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            ln1: self.ln1.zeros_like(),
            attn: self.attn.zeros_like(),
            ln2: self.ln2.zeros_like(),
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn forward(&self, x: Array2<T>, heads: usize) -> (Array2<T>, BlockCache<T>) {
        let (h1, c1) = self.ln1.forward(x.view());
        let (a, ca) = self.attn.forward(h1.view(), heads);
        let x = x + &a;
        let (h2, c2) = self.ln2.forward(x.view());
        let pre_act = self.fc1.forward(h2.view());
        let act = pre_act.mapv(gelu);
        let m = self.fc2.forward(act.view());
        (x + &m, BlockCache { ln1: c1, attn: ca, ln2: c2, h2, pre_act, act })
    }

    pub fn backward(&self, cache: &BlockCache<T>, gy: Array2<T>, heads: usize, g: &mut Self) -> Array2<T> {
        let mut g_act = self.fc2.backward(cache.act.view(), gy.view(), &mut g.fc2);
        Zip::from(&mut g_act).and(&cache.pre_act).for_each(|ga, x| *ga = *ga * gelu_grad(*x));
        let g_h2 = self.fc1.backward(cache.h2.view(), g_act.view(), &mut g.fc1);
        let gx = gy + &self.ln2.backward(&cache.ln2, g_h2.view(), &mut g.ln2);
        let g_h1 = self.attn.backward(&cache.attn, gx.view(), heads, &mut g.attn);
        gx + &self.ln1.backward(&cache.ln1, g_h1.view(), &mut g.ln1)
    }
}
