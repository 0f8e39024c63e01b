//! Unnormalized 2D DFT and the log-weighted frequency loss.
//!
//! For a per-frequency discrepancy `d(u,v) = sqrt(Σ_c |F_gt − F_pred|²)` the
//! loss is `(1/HW) Σ ω(u,v) d(u,v)` with `ω = ln(sqrt(d) + 1)`. The weight ω
//! is held constant when differentiating: gradients flow only through the
//! linear `d` factor.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_same(pred: &ArrayView3<impl Real>, gt: &ArrayView3<impl Real>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

/// In-place 2D transform of one `h×w` row-major plane.
fn fft2_plane(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], h: usize, w: usize, dir: FftDirection) {
    let row = planner.plan_fft(w, dir);
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let col = planner.plan_fft(h, dir);
    let mut buf = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            buf[y] = data[y * w + x];
        }
        col.process(&mut buf);
        for y in 0..h {
            data[y * w + x] = buf[y];
        }
    }
}

fn spectrum_f64<T: Real>(image: ArrayView3<T>) -> Vec<Vec<Complex<f64>>> {
    let (h, w, ch) = image.dim();
    let mut planner = FftPlanner::new();
    (0..ch)
        .map(|c| {
            let plane = image.index_axis(Axis(2), c);
            let mut data: Vec<Complex<f64>> = plane.iter().map(|v| Complex::new(v.to64(), 0.0)).collect();
            fft2_plane(&mut planner, &mut data, h, w, FftDirection::Forward);
            data
        })
        .collect()
}

/// `F(u,v) = Σ_h Σ_w I(h,w) e^{−j2π(uh/H + vw/W)}` per channel, without any
/// normalization. Computed in f64 regardless of `T`.
pub fn dft2<T: Real>(image: ArrayView3<T>) -> Array3<Complex<T>> {
    let (h, w, ch) = image.dim();
    let spec = spectrum_f64(image);
    Array3::from_shape_fn((h, w, ch), |(y, x, c)| {
        let v = spec[c][y * w + x];
        Complex::new(T::of(v.re), T::of(v.im))
    })
}

fn discrepancy(pred: &[Vec<Complex<f64>>], gt: &[Vec<Complex<f64>>], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| pred.iter().zip(gt).map(|(p, g)| (g[k] - p[k]).norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

pub fn lwf_loss<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<T> {
    check_same(&pred, &gt)?;
    let (h, w, _) = pred.dim();
    let n = h * w;
    if n == 0 {
        return Ok(T::zero());
    }
    let d = discrepancy(&spectrum_f64(pred), &spectrum_f64(gt), n);
    let total: f64 = d.iter().map(|&d| (d.sqrt() + 1.0).ln() * d).sum();
    Ok(T::of(total / n as f64))
}

/// The weight map `ω(u,v)` for a pair of images, `H×W`.
pub fn lwf_weights<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<Array2<f64>> {
    check_same(&pred, &gt)?;
    let (h, w, _) = pred.dim();
    let d = discrepancy(&spectrum_f64(pred), &spectrum_f64(gt), h * w);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| (d[y * w + x].sqrt() + 1.0).ln()))
}

/// `(1/HW) Σ ω d` with an externally fixed weight map. With the map from
/// [`lwf_weights`] this equals [`lwf_loss`], and its derivative is the one
/// [`lwf_loss_grad`] returns.
pub fn lwf_loss_weighted<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>, omega: ArrayView2<f64>) -> Result<T> {
    check_same(&pred, &gt)?;
    let (h, w, _) = pred.dim();
    if omega.dim() != (h, w) {
        return Err(Error::Shape(format!("weight map {:?} vs {h}x{w}", omega.dim())));
    }
    let n = h * w;
    if n == 0 {
        return Ok(T::zero());
    }
    let d = discrepancy(&spectrum_f64(pred), &spectrum_f64(gt), n);
    let total: f64 = d.iter().zip(omega.iter()).map(|(d, o)| o * d).sum();
    Ok(T::of(total / n as f64))
}

/// Loss value and its gradient with respect to `pred`, with ω frozen.
pub fn lwf_loss_grad<T: Real>(pred: ArrayView3<T>, gt: ArrayView3<T>) -> Result<(T, Array3<T>)> {
    check_same(&pred, &gt)?;
    let (h, w, ch) = pred.dim();
    let n = h * w;
    if n == 0 {
        return Ok((T::zero(), Array3::zeros((h, w, ch))));
    }
    let fp = spectrum_f64(pred);
    let fg = spectrum_f64(gt);
    let d = discrepancy(&fp, &fg, n);
    let inv_n = 1.0 / n as f64;
    let total: f64 = d.iter().map(|&d| (d.sqrt() + 1.0).ln() * d).sum::<f64>() * inv_n;

    // dL/dRe F + j dL/dIm F = (ω/HW) (F_pred − F_gt)/d, and the image gradient
    // is the real part of the unnormalized inverse transform of that.
    let mut planner = FftPlanner::new();
    let mut grad = Array3::zeros((h, w, ch));
    for c in 0..ch {
        let mut g: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                if d[k] > 0.0 {
                    let omega = (d[k].sqrt() + 1.0).ln();
                    (fp[c][k] - fg[c][k]) * (omega * inv_n / d[k])
                } else {
                    Complex::new(0.0, 0.0)
                }
            })
            .collect();
        fft2_plane(&mut planner, &mut g, h, w, FftDirection::Inverse);
        for y in 0..h {
            for x in 0..w {
                grad[[y, x, c]] = T::of(g[y * w + x].re);
            }
        }
    }
    Ok((T::of(total), grad))
}
