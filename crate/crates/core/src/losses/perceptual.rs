//! Pluggable perceptual-distance slot.
//!
//! A [`FeatureExtractor`] maps an image to a stack of feature maps and can
//! pull feature gradients back onto the image. The default,
//! [`GradientPyramid`], needs no pretrained weights: finite-difference image
//! gradients at several average-pooled scales. It ignores constant offsets,
//! so it is much weaker than a learned network.

use ndarray::{s, Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub trait FeatureExtractor<T: Real> {
    fn name(&self) -> &str;

    fn extract(&self, image: ArrayView3<T>) -> Result<Vec<Array3<T>>>;

    /// Pulls `dL/dfeatures` back to `dL/dimage`.
    fn backward(&self, image: ArrayView3<T>, feature_grads: &[Array3<T>]) -> Result<Array3<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientPyramid {
    pub levels: usize,
}

impl Default for GradientPyramid {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

fn avg_pool2<T: Real>(img: ArrayView3<T>) -> Array3<T> {
    let (h, w, c) = img.dim();
    let q = T::of(0.25);
    Array3::from_shape_fn((h / 2, w / 2, c), |(y, x, k)| {
        (img[[2 * y, 2 * x, k]] + img[[2 * y + 1, 2 * x, k]] + img[[2 * y, 2 * x + 1, k]] + img[[2 * y + 1, 2 * x + 1, k]]) * q
    })
}

fn avg_pool2_backward<T: Real>(g: ArrayView3<T>, dim: (usize, usize, usize)) -> Array3<T> {
    let mut out = Array3::zeros(dim);
    let q = T::of(0.25);
    for ((y, x, k), v) in g.indexed_iter() {
        let v = *v * q;
        out[[2 * y, 2 * x, k]] += v;
        out[[2 * y + 1, 2 * x, k]] += v;
        out[[2 * y, 2 * x + 1, k]] += v;
        out[[2 * y + 1, 2 * x + 1, k]] += v;
    }
    out
}

impl GradientPyramid {
    fn pyramid<T: Real>(&self, image: ArrayView3<T>) -> Vec<Array3<T>> {
        let mut levels = vec![image.to_owned()];
        for _ in 1..self.levels {
            let last = levels.last().unwrap();
            if last.dim().0 < 4 || last.dim().1 < 4 {
                break;
            }
            let next = avg_pool2(last.view());
            levels.push(next);
        }
        levels
    }
}

impl<T: Real> FeatureExtractor<T> for GradientPyramid {
    fn name(&self) -> &str {
        "gradient_pyramid"
    }

    fn extract(&self, image: ArrayView3<T>) -> Result<Vec<Array3<T>>> {
        if self.levels == 0 {
            return Err(Error::Config("gradient pyramid needs at least one level".into()));
        }
        let mut feats = Vec::new();
        for level in self.pyramid(image) {
            let (h, w, _) = level.dim();
            if w >= 2 {
                feats.push(&level.slice(s![.., 1.., ..]) - &level.slice(s![.., ..w - 1, ..]));
            }
            if h >= 2 {
                feats.push(&level.slice(s![1.., .., ..]) - &level.slice(s![..h - 1, .., ..]));
            }
        }
        Ok(feats)
    }

    fn backward(&self, image: ArrayView3<T>, feature_grads: &[Array3<T>]) -> Result<Array3<T>> {
        let dims: Vec<(usize, usize, usize)> = self.pyramid(image).iter().map(|l| l.dim()).collect();
        let mut it = feature_grads.iter();
        let mut level_grads = Vec::with_capacity(dims.len());
        for &(h, w, c) in &dims {
            let mut g = Array3::<T>::zeros((h, w, c));
            if w >= 2 {
                let f = it.next().ok_or_else(|| Error::Shape("missing feature gradient".into()))?;
                g.slice_mut(s![.., 1.., ..]).zip_mut_with(f, |a, b| *a += *b);
                g.slice_mut(s![.., ..w - 1, ..]).zip_mut_with(f, |a, b| *a -= *b);
            }
            if h >= 2 {
                let f = it.next().ok_or_else(|| Error::Shape("missing feature gradient".into()))?;
                g.slice_mut(s![1.., .., ..]).zip_mut_with(f, |a, b| *a += *b);
                g.slice_mut(s![..h - 1, .., ..]).zip_mut_with(f, |a, b| *a -= *b);
            }
            level_grads.push(g);
        }
        // Fold coarse levels back down through the pooling.
        while level_grads.len() > 1 {
            let coarse = level_grads.pop().unwrap();
            let fine = level_grads.last_mut().unwrap();
            let up = avg_pool2_backward(coarse.view(), fine.dim());
            *fine += &up;
        }
        Ok(level_grads.pop().unwrap())
    }
}

fn check_same<T: Real>(a: &ArrayView3<T>, b: &ArrayView3<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("pred {:?} vs gt {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean over feature maps of the mean squared feature difference.
pub fn perceptual_loss<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>, extractor: &dyn FeatureExtractor<T>) -> Result<T> {
    perceptual_loss_grad(pred, gt, extractor, false).map(|(l, _)| l)
}

pub fn perceptual_loss_grad<T: Real>(
    pred: ArrayView3<T>,
    gt: ArrayView3<T>,
    extractor: &dyn FeatureExtractor<T>,
    with_grad: bool,
) -> Result<(T, Option<Array3<T>>)> {
    check_same(&pred, &gt)?;
    let fp = extractor.extract(pred)?;
    let fg = extractor.extract(gt)?;
    if fp.len() != fg.len() || fp.iter().zip(&fg).any(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::Shape("feature stacks differ".into()));
    }
    if fp.is_empty() {
        return Ok((T::zero(), with_grad.then(|| Array3::zeros(pred.raw_dim()))));
    }
    let maps = T::of(fp.len() as f64);
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(fp.len());
    for (a, b) in fp.iter().zip(&fg) {
        let diff = a - b;
        let n = T::of(diff.len().max(1) as f64);
        loss += diff.iter().map(|v| *v * *v).sum::<T>() / n;
        if with_grad {
            grads.push(diff.mapv(|v| T::of(2.0) * v / (n * maps)));
        }
    }
    let grad = if with_grad { Some(extractor.backward(pred, &grads)?) } else { None };
    Ok((loss / maps, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> Array3<f64> {
        Array3::from_shape_fn((8, 8, 3), |(y, x, c)| (((y * 31 + x * 17 + c * 7 + seed * 13) % 23) as f64) / 23.0)
    }

    #[test]
    fn identical_and_symmetric() {
        let e = GradientPyramid::default();
        let (a, b) = (img(1), img(2));
        assert_eq!(perceptual_loss(a.view(), a.view(), &e).unwrap(), 0.0);
        let ab = perceptual_loss(a.view(), b.view(), &e).unwrap();
        let ba = perceptual_loss(b.view(), a.view(), &e).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-15);
    }

    #[test]
    fn default_extractor_is_shift_blind() {
        let e = GradientPyramid::default();
        let a = img(3);
        let b = a.mapv(|v| v + 0.125);
        assert!(perceptual_loss(a.view(), b.view(), &e).unwrap().abs() < 1e-24);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = GradientPyramid::default();
        let (a, b) = (img(4), img(5));
        let (_, g) = perceptual_loss_grad(a.view(), b.view(), &e, true).unwrap();
        let g = g.unwrap();
        for idx in [(0, 0, 0), (3, 4, 1), (7, 7, 2), (5, 2, 0)] {
            let h = 1e-6;
            let mut p = a.clone();
            p[idx] += h;
            let mut m = a.clone();
            m[idx] -= h;
            let fd = (perceptual_loss(p.view(), b.view(), &e).unwrap() - perceptual_loss(m.view(), b.view(), &e).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8, "{idx:?}: {fd} vs {}", g[idx]);
        }
    }
}
