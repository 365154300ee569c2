//! Image tensors, preprocessing, and PNG interchange.
//!
//! `ImageTensor` is the unit every stage works in: H×W×C real values
//! in [-1, 1]. Decoded files pass through `preprocess` (channel
//! adaptation, bilinear resize, range mapping) before anything else
//! sees them.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::sha256;

/// Decoded image in its original size and channel count, values in
/// `[0, max_value]`.
#[derive(Debug, Clone)]
pub struct RawImage {
    pub data: Vec<f64>,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub max_value: f64,
}

/// H×W×C image with values in [-1, 1], stored row-major
/// (height, width, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    h: usize,
    w: usize,
    c: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f64>, h: usize, w: usize, c: usize) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(format!(
                "image buffer holds {} values, expected {h}×{w}×{c}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(Error::input(format!(
                "image values must lie in [-1, 1], found {v}"
            )));
        }
        Ok(ImageTensor { data, h, w, c })
    }

    /// All-background (+1, white) image.
    pub fn blank(h: usize, w: usize, c: usize) -> Self {
        ImageTensor {
            data: vec![1.0; h * w * c],
            h,
            w,
            c,
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Pixel accessor (row, column, channel).
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f64 {
        &mut self.data[(y * self.w + x) * self.c + ch]
    }

    /// Repacks into channel-major `[C, H, W]` layout for the model.
    pub fn to_chw(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    out[(ch * self.h + y) * self.w + x] = self.at(y, x, ch);
                }
            }
        }
        Tensor::from_vec(out, &[self.c, self.h, self.w]).expect("same element count")
    }

    /// Inverse of `to_chw`, clamping into [-1, 1] to absorb roundoff.
    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!("expected [C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * c + ch] =
                        t.data()[(ch * h + y) * w + x].clamp(-1.0, 1.0);
                }
            }
        }
        Ok(ImageTensor { data, h, w, c })
    }

    /// Content digest over dimensions and exact pixel bits; the cache
    /// key component identifying this image.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut bytes = Vec::with_capacity(24 + self.data.len() * 8);
        bytes.extend_from_slice(&(self.h as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.w as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.c as u64).to_le_bytes());
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sha256(&bytes)
    }
}

/// Bilinear resampling of one channel plane (pixel-center convention;
/// edges clamp, so constants stay constant).
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w);
    let mut out = vec![0.0; out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out[oy * out_w + ox] = top * (1.0 - wy) + bottom * wy;
        }
    }
    out
}

/// Adapts a decoded image to the model's input shape: rescale to
/// [-1, 1], convert channels (replicate gray, or weighted luminance for
/// color→gray), and bilinearly resize.
pub fn preprocess(raw: &RawImage, target_h: usize, target_w: usize, target_c: usize) -> Result<ImageTensor> {
    if raw.h == 0 || raw.w == 0 || raw.data.is_empty() {
        return Err(Error::input("cannot preprocess a zero-sized image"));
    }
    if raw.data.len() != raw.h * raw.w * raw.c {
        return Err(Error::shape(format!(
            "raw image buffer holds {} values, expected {}×{}×{}",
            raw.data.len(),
            raw.h,
            raw.w,
            raw.c
        )));
    }
    if raw.max_value <= 0.0 {
        return Err(Error::input("raw image max_value must be positive"));
    }
    if !matches!(raw.c, 1 | 3) || !matches!(target_c, 1 | 3) {
        return Err(Error::input(format!(
            "only 1- or 3-channel images are supported, got {} → {}",
            raw.c, target_c
        )));
    }

    // Range map to [-1, 1], in HWC order.
    let scaled: Vec<f64> = raw
        .data
        .iter()
        .map(|v| (v / raw.max_value) * 2.0 - 1.0)
        .collect();

    // Collapse to single-channel planes before the resize when the
    // target has fewer channels; replicate after when it has more.
    let (planes, plane_count) = if raw.c == 3 && target_c == 1 {
        // Rec. 601 luminance weights.
        let mut plane = vec![0.0; raw.h * raw.w];
        for (i, p) in plane.iter_mut().enumerate() {
            *p = 0.299 * scaled[i * 3] + 0.587 * scaled[i * 3 + 1] + 0.114 * scaled[i * 3 + 2];
        }
        (vec![plane], 1)
    } else {
        let mut planes = Vec::with_capacity(raw.c);
        for ch in 0..raw.c {
            planes.push(
                (0..raw.h * raw.w)
                    .map(|i| scaled[i * raw.c + ch])
                    .collect::<Vec<f64>>(),
            );
        }
        (planes, raw.c)
    };

    let resized: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| bilinear_resize(p, raw.h, raw.w, target_h, target_w))
        .collect();

    let mut data = vec![0.0; target_h * target_w * target_c];
    for i in 0..target_h * target_w {
        for ch in 0..target_c {
            let src = if plane_count == target_c { ch } else { 0 };
            data[i * target_c + ch] = resized[src][i].clamp(-1.0, 1.0);
        }
    }
    ImageTensor::new(data, target_h, target_w, target_c)
}

/// Decodes one PNG into a `RawImage` (8-bit, gray stays 1-channel,
/// anything else becomes RGB).
pub fn decode_png(path: &Path) -> Result<RawImage> {
    let img = image::open(path)?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            RawImage {
                data: g.into_raw().into_iter().map(f64::from).collect(),
                h,
                w,
                c: 1,
                max_value: 255.0,
            }
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            RawImage {
                data: rgb.into_raw().into_iter().map(f64::from).collect(),
                h,
                w,
                c: 3,
                max_value: 255.0,
            }
        }
    })
}

/// Writes an image as an 8-bit PNG, mapping [-1, 1] to [0, 255].
pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let to_u8 = |v: f64| (((v + 1.0) / 2.0) * 255.0).round().clamp(0.0, 255.0) as u8;
    match img.c() {
        1 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let g = GrayImage::from_raw(img.w() as u32, img.h() as u32, buf)
                .expect("buffer sized to dimensions");
            g.save(path)?;
        }
        3 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
            let rgb = RgbImage::from_raw(img.w() as u32, img.h() as u32, buf)
                .expect("buffer sized to dimensions");
            rgb.save(path)?;
        }
        c => {
            return Err(Error::input(format!(
                "PNG export supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(())
}

/// PNG files in a directory, sorted by filename for determinism.
pub fn png_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads and preprocesses every PNG in a directory (sorted by name).
/// Undecodable files abort in strict mode, otherwise they are skipped
/// and counted.
pub fn load_images(
    dir: &Path,
    target_h: usize,
    target_w: usize,
    target_c: usize,
    strict: bool,
) -> Result<(Vec<ImageTensor>, usize)> {
    let paths = png_paths(dir)?;
    let mut images = Vec::with_capacity(paths.len());
    let mut skipped = 0usize;
    for p in &paths {
        match decode_png(p).and_then(|raw| preprocess(&raw, target_h, target_w, target_c)) {
            Ok(img) => images.push(img),
            Err(e) if strict => {
                return Err(Error::input(format!("{}: {e}", p.display())));
            }
            Err(_) => skipped += 1,
        }
    }
    if images.is_empty() {
        return Err(Error::input(format!(
            "no loadable PNG images in {}",
            dir.display()
        )));
    }
    Ok((images, skipped))
}
