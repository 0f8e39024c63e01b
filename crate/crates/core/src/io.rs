//! Image files: 8-bit PNG for sRGB images and spectra, PFM for depth maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Nearest 8-bit level of a value in `[0, 1]`.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps every value to the nearest of the 256 levels `k/255`.
pub fn quantize<T: Real>(image: ArrayView3<T>) -> Array3<T> {
    image.mapv(|v| T::of(quantize_u8(v.to64()) as f64 / 255.0))
}

pub fn write_png<T: Real>(path: &Path, image: ArrayView3<T>) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("PNG export needs 3 channels, got {c}")));
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (x, y) = (x as usize, y as usize);
        *px = Rgb([0, 1, 2].map(|k| quantize_u8(image[[y, x, k]].to64())));
    }
    ensure_parent(path)?;
    img.save(path)?;
    Ok(())
}

pub fn write_gray_png<T: Real>(path: &Path, image: ArrayView2<T>) -> Result<()> {
    let (h, w) = image.dim();
    let mut img = GrayImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = Luma([quantize_u8(image[[y as usize, x as usize]].to64())]);
    }
    ensure_parent(path)?;
    img.save(path)?;
    Ok(())
}

/// Reads an 8-bit image as RGB values `k/255`.
pub fn read_png<T: Real>(path: &Path) -> Result<Array3<T>> {
    let img = image::open(path).map_err(|e| Error::load(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        T::of(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    }))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

/// Single-channel little-endian PFM, rows stored bottom to top.
pub fn write_pfm<T: Real>(path: &Path, map: ArrayView2<T>) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            buf.extend_from_slice(&(map[[y, x]].to64() as f32).to_le_bytes());
        }
    }
    ensure_parent(path)?;
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_pfm<T: Real>(path: &Path) -> Result<Array2<T>> {
    let bytes = fs::read(path).map_err(|e| Error::load(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::load(path, "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // the single whitespace byte before the raster
    if fields[0] != "Pf" {
        return Err(Error::load(path, format!("expected a single-channel PFM, found {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::load(path, format!("bad PFM dimension {s:?}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3].parse().map_err(|_| Error::load(path, "bad PFM scale"))?;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h * 4 {
        return Err(Error::load(path, format!("expected {} raster bytes, found {}", w * h * 4, raster.len())));
    }
    let little = scale < 0.0;
    let mut out = Array2::zeros((h, w));
    for (i, c) in raster.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (i / w, i % w);
        out[[h - 1 - row, x]] = T::of(v as f64);
    }
    Ok(out)
}
