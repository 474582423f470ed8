//! Example-guided and multimodal translation, latent interpolation, and
//! image-grid output.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::data::batch_to_images;
use crate::error::{Error, Result};
use crate::model::{CodeKind, ContentCode, DomainId, ImageBatch, Model, StyleCode};
use crate::tensor::Tensor;

/// Translation guided by a reference image of the target domain.
pub fn example_guided(model: &Model, x_content: &ImageBatch, x_style: &ImageBatch, src: DomainId, dst: DomainId) -> Result<ImageBatch> {
    model.translate(x_content, x_style, src, dst)
}

/// One translation per sampled style; style `i` is drawn with seed `seed + i`.
pub fn multimodal(model: &Model, x_content: &ImageBatch, src: DomainId, dst: DomainId, n_styles: usize, seed: u64) -> Result<Vec<ImageBatch>> {
    if n_styles == 0 {
        return Err(Error::InvalidInput("n_styles must be >= 1".into()));
    }
    let (_, c) = model.encode_content(x_content, src)?;
    let h = model.map_content(&c, dst)?;
    (0..n_styles as u64)
        .map(|i| {
            let s = model.sample_style(x_content.batch(), seed.wrapping_add(i))?;
            model.generate(&h, &s, dst)
        })
        .collect()
}

/// Linear interpolation between codes of the same kind and shape.
pub trait Lerp: Sized {
    fn lerp(&self, other: &Self, t: f64) -> Result<Self>;
}

fn lerp_tensor(a: &Tensor, b: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("interpolation weight {t} outside [0, 1]")));
    }
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    // The endpoints are returned as-is so they match direct generation bitwise.
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 {
        return Ok(b.clone());
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((1.0 - t) * f64::from(x) + t * f64::from(y)) as f32)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

impl Lerp for ContentCode {
    fn lerp(&self, other: &Self, t: f64) -> Result<Self> {
        if self.kind() != other.kind() {
            return Err(Error::Tag(format!(
                "cannot interpolate a {:?} code with a {:?} code",
                self.kind(),
                other.kind()
            )));
        }
        ContentCode::new(lerp_tensor(self.tensor(), other.tensor(), t)?, self.kind())
    }
}

impl Lerp for StyleCode {
    fn lerp(&self, other: &Self, t: f64) -> Result<Self> {
        StyleCode::new(lerp_tensor(self.tensor(), other.tensor(), t)?)
    }
}

/// `(1 - t) a + t b`.
pub fn lerp_codes<C: Lerp>(a: &C, b: &C, t: f64) -> Result<C> {
    a.lerp(b, t)
}

/// `steps` evenly spaced weights from 0 to 1 inclusive.
pub fn t_grid(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidInput(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps).map(|k| k as f64 / last).collect())
}

/// Fixed content rendered with styles moving from `s1` to `s2`.
pub fn interpolate_style(
    model: &Model,
    x_content: &ImageBatch,
    src: DomainId,
    s1: &StyleCode,
    s2: &StyleCode,
    steps: usize,
    dst: DomainId,
) -> Result<Vec<ImageBatch>> {
    let grid = t_grid(steps)?;
    let (_, c) = model.encode_content(x_content, src)?;
    let h = model.map_content(&c, dst)?;
    grid.into_iter()
        .map(|t| model.generate(&h, &s1.lerp(s2, t)?, dst))
        .collect()
}

fn render_shared_path(model: &Model, c1: &ContentCode, c2: &ContentCode, s: &StyleCode, steps: usize, dst: DomainId) -> Result<Vec<ImageBatch>> {
    let grid = t_grid(steps)?;
    if c1.kind() != CodeKind::Shared || c2.kind() != CodeKind::Shared {
        return Err(Error::Tag("content interpolation runs in the shared space".into()));
    }
    grid.into_iter()
        .map(|t| {
            let h = model.map_content(&c1.lerp(c2, t)?, dst)?;
            model.generate(&h, s, dst)
        })
        .collect()
}

/// Content moving between two images of the same domain, rendered with the
/// style of `x_style` from that domain.
pub fn interpolate_content(model: &Model, x1: &ImageBatch, x2: &ImageBatch, x_style: &ImageBatch, domain: DomainId, steps: usize) -> Result<Vec<ImageBatch>> {
    let (_, c1) = model.encode_content(x1, domain)?;
    let (_, c2) = model.encode_content(x2, domain)?;
    let s = model.encode_style(x_style, domain)?;
    render_shared_path(model, &c1, &c2, &s, steps, domain)
}

/// Content moving from an A image to a B image. The two shared codes are
/// interpolated, each interpolant is mapped into `style_domain` and
/// rendered with the style of `x_style`.
pub fn interpolate_content_cross_domain(
    model: &Model,
    x_src_a: &ImageBatch,
    x_src_b: &ImageBatch,
    x_style: &ImageBatch,
    style_domain: DomainId,
    steps: usize,
) -> Result<Vec<ImageBatch>> {
    let (_, c_a) = model.encode_content(x_src_a, DomainId::A)?;
    let (_, c_b) = model.encode_content(x_src_b, DomainId::B)?;
    let s = model.encode_style(x_style, style_domain)?;
    render_shared_path(model, &c_a, &c_b, &s, steps, style_domain)
}

/// Tiles images into one raster: `rows[r][k]` lands at row `r`, column `k`.
pub fn tile(rows: &[Vec<RgbImage>]) -> Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::InvalidInput("empty image grid".into()))?;
    let (w, h) = first.dimensions();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let mut out = RgbImage::new(w * cols, h * rows.len() as u32);
    for (r, row) in rows.iter().enumerate() {
        for (k, img) in row.iter().enumerate() {
            if img.dimensions() != (w, h) {
                return Err(Error::InvalidInput("grid images must share one size".into()));
            }
            image::imageops::replace(&mut out, img, i64::from(k as u32 * w), i64::from(r as u32 * h));
        }
    }
    Ok(out)
}

/// Writes every frame as `<mode>_s<seed>_t<k>_<i>.png` (frame `k`, batch
/// element `i`) plus `<mode>_s<seed>_grid.png` with one row per batch
/// element. Returns the paths written, grid last.
pub fn save_sequence(dir: &Path, mode: &str, seed: u64, frames: &[ImageBatch]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per_frame: Vec<Vec<RgbImage>> = frames.iter().map(batch_to_images).collect();
    let n = per_frame.first().map_or(0, Vec::len);
    let mut written = Vec::new();
    for (k, imgs) in per_frame.iter().enumerate() {
        for (i, img) in imgs.iter().enumerate() {
            let path = dir.join(format!("{mode}_s{seed}_t{k:03}_{i:03}.png"));
            img.save(&path)?;
            written.push(path);
        }
    }
    let rows: Vec<Vec<RgbImage>> = (0..n)
        .map(|i| per_frame.iter().map(|f| f[i].clone()).collect())
        .collect();
    let grid = dir.join(format!("{mode}_s{seed}_grid.png"));
    tile(&rows)?.save(&grid)?;
    written.push(grid);
    Ok(written)
}
