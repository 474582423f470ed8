//! Two-domain image folders, batch sampling and the synthetic toy dataset.
//!
//! Datasets use the `trainA/trainB/testA/testB` folder layout. Images are
//! decoded once into memory; batches are a pure function of
//! `(seed, domain, step)`, which makes training resumable without storing
//! any sampler state.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DomainId, ImageBatch, IMAGE_CHANNELS};
use crate::par;
use crate::seeding::{derive_seed, STREAM_AUGMENT, STREAM_SHUFFLE, STREAM_TOY};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn folder(self, d: DomainId) -> String {
        let s = match self {
            Split::Train => "train",
            Split::Test => "test",
        };
        format!("{s}{d}")
    }
}

/// Maps an 8-bit channel value into `[-1, 1]`.
pub fn normalize(v: u8) -> f32 {
    f32::from(v) / 127.5 - 1.0
}

/// Inverse of [`normalize`], rounding to the nearest 8-bit level.
pub fn denormalize(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Writes image `i` of a batch into `out` as `3 x H x W` normalized floats.
fn write_chw(img: &RgbImage, out: &mut [f32]) {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    for (x, y, px) in img.enumerate_pixels() {
        let at = (y * w + x) as usize;
        for c in 0..IMAGE_CHANNELS {
            out[c * plane + at] = normalize(px[c]);
        }
    }
}

pub fn images_to_batch(images: &[RgbImage]) -> Result<ImageBatch> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("no images to batch".into()))?;
    let (w, h) = first.dimensions();
    if images.iter().any(|i| i.dimensions() != (w, h)) {
        return Err(Error::InvalidInput("images in a batch must share one size".into()));
    }
    let per = IMAGE_CHANNELS * (w * h) as usize;
    let mut data = vec![0.0; images.len() * per];
    for (img, out) in images.iter().zip(data.chunks_mut(per)) {
        write_chw(img, out);
    }
    ImageBatch::new(Tensor::new(
        vec![images.len(), IMAGE_CHANNELS, h as usize, w as usize],
        data,
    )?)
}

/// Splits a batch back into 8-bit images.
pub fn batch_to_images(batch: &ImageBatch) -> Vec<RgbImage> {
    let [n, _, h, w] = batch.tensor().dims4().expect("image batches are 4-D");
    let plane = h * w;
    let data = batch.tensor().data();
    (0..n)
        .map(|i| {
            let base = i * IMAGE_CHANNELS * plane;
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let at = base + y as usize * w + x as usize;
                Rgb([
                    denormalize(data[at]),
                    denormalize(data[at + plane]),
                    denormalize(data[at + 2 * plane]),
                ])
            })
        })
        .collect()
}

/// Augmentations applied when a batch is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augment {
    /// Output size of every image.
    pub image_size: usize,
    /// Images are first resized to this size (defaults to `image_size`).
    pub load_size: Option<usize>,
    /// Crop a random `image_size` window instead of the center one.
    pub random_crop: bool,
    pub horizontal_flip: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Self {
            image_size: 64,
            load_size: None,
            random_crop: false,
            horizontal_flip: false,
        }
    }
}

impl Augment {
    pub fn none(image_size: usize) -> Self {
        Self {
            image_size,
            ..Self::default()
        }
    }

    fn load_size(&self) -> usize {
        self.load_size.unwrap_or(self.image_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.load_size() < self.image_size {
            return Err(Error::Config(format!(
                "load size {} must be >= image size {} > 0",
                self.load_size(),
                self.image_size
            )));
        }
        Ok(())
    }

    fn apply<R: Rng>(&self, img: &RgbImage, rng: &mut R) -> RgbImage {
        let (load, size) = (self.load_size() as u32, self.image_size as u32);
        let slack = load - size;
        let (x0, y0) = if self.random_crop && slack > 0 {
            (rng.random_range(0..=slack), rng.random_range(0..=slack))
        } else {
            (slack / 2, slack / 2)
        };
        let flip = self.horizontal_flip && rng.random_bool(0.5);
        let mut out = imageops::crop_imm(img, x0, y0, size, size).to_image();
        if flip {
            imageops::flip_horizontal_in_place(&mut out);
        }
        out
    }
}

/// A dataset root with the four-folder layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub augment: Augment,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, augment: Augment, seed: u64) -> Self {
        Self {
            root: root.into(),
            augment,
            seed,
        }
    }

    pub fn dir(&self, split: Split, d: DomainId) -> PathBuf {
        self.root.join(split.folder(d))
    }

    /// Checks that all four folders exist and hold at least one file.
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        for split in [Split::Train, Split::Test] {
            for d in DomainId::BOTH {
                let dir = self.dir(split, d);
                if list_files(&dir)?.is_empty() {
                    return Err(Error::Dataset(format!("{} is empty", dir.display())));
                }
            }
        }
        Ok(())
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decoded images of one domain and split.
#[derive(Clone, Debug)]
pub struct ImagePool {
    domain: DomainId,
    names: Vec<String>,
    images: Vec<RgbImage>,
    augment: Augment,
    warnings: Vec<String>,
}

impl ImagePool {
    /// Decodes every file in the folder. Undecodable files are skipped with
    /// a warning; a folder without any usable image is an error.
    pub fn load(spec: &DatasetSpec, split: Split, domain: DomainId) -> Result<Self> {
        spec.augment.validate()?;
        let dir = spec.dir(split, domain);
        let files = list_files(&dir)?;
        let size = spec.augment.load_size() as u32;
        let decoded = par::map_range(files.len(), |i| {
            image::open(&files[i]).map(|img| {
                let rgb = img.to_rgb8();
                if rgb.dimensions() == (size, size) {
                    rgb
                } else {
                    imageops::resize(&rgb, size, size, FilterType::Triangle)
                }
            })
        });
        let mut pool = Self {
            domain,
            names: Vec::new(),
            images: Vec::new(),
            augment: spec.augment,
            warnings: Vec::new(),
        };
        for (path, res) in files.iter().zip(decoded) {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            match res {
                Ok(img) => {
                    pool.names.push(name);
                    pool.images.push(img);
                }
                Err(e) => {
                    let msg = format!("skipping {}: {e}", path.display());
                    log::warn!("{msg}");
                    pool.warnings.push(msg);
                }
            }
        }
        if pool.images.is_empty() {
            return Err(Error::Dataset(format!("no readable images in {}", dir.display())));
        }
        Ok(pool)
    }

    /// A pool built from in-memory images, all of size `image_size`.
    pub fn from_images(domain: DomainId, images: Vec<RgbImage>, augment: Augment) -> Result<Self> {
        augment.validate()?;
        let s = augment.load_size() as u32;
        if images.is_empty() || images.iter().any(|i| i.dimensions() != (s, s)) {
            return Err(Error::Dataset(format!("pool needs nonempty {s}x{s} images")));
        }
        Ok(Self {
            domain,
            names: (0..images.len()).map(|i| format!("{i}")).collect(),
            images,
            augment,
            warnings: Vec::new(),
        })
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Images by index, without augmentation.
    pub fn get(&self, indices: &[usize]) -> Result<ImageBatch> {
        let s = self.augment.image_size;
        let imgs: Vec<RgbImage> = indices
            .iter()
            .map(|&i| {
                self.images
                    .get(i)
                    .map(|img| Augment::none(s).apply_center(img))
                    .ok_or_else(|| Error::InvalidInput(format!("image index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        images_to_batch(&imgs)
    }

    /// The index drawn at sampling position `p`: positions walk through a
    /// fresh permutation of the pool every epoch.
    fn index_at(&self, p: u64, seed: u64) -> usize {
        let n = self.images.len() as u64;
        let epoch = p / n;
        let mut perm: Vec<usize> = (0..self.images.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_SHUFFLE, self.domain as u64, epoch]));
        perm.shuffle(&mut rng);
        perm[(p % n) as usize]
    }

    /// The batch for training step `step` (numbered from 1).
    pub fn batch(&self, batch_size: usize, step: u64, seed: u64) -> Result<ImageBatch> {
        if batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        let base = step.saturating_sub(1) * batch_size as u64;
        let imgs: Vec<RgbImage> = (0..batch_size as u64)
            .map(|i| {
                let idx = self.index_at(base + i, seed);
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_AUGMENT, self.domain as u64, step, i]));
                self.augment.apply(&self.images[idx], &mut rng)
            })
            .collect();
        images_to_batch(&imgs)
    }
}

impl Augment {
    fn apply_center(&self, img: &RgbImage) -> RgbImage {
        let (w, _) = img.dimensions();
        let size = self.image_size as u32;
        if w == size {
            return img.clone();
        }
        let off = (w.saturating_sub(size)) / 2;
        imageops::crop_imm(img, off, off, size, size).to_image()
    }
}

/// A batch drawn from a dataset folder.
pub fn load_batch(spec: &DatasetSpec, split: Split, domain: DomainId, batch_size: usize, step: u64) -> Result<ImageBatch> {
    ImagePool::load(spec, split, domain)?.batch(batch_size, step, spec.seed)
}

// ---- toy dataset ------------------------------------------------------------------

/// Hue ranges in degrees: warm for A, cool for B.
pub const TOY_HUE_A: (f64, f64) = (0.0, 50.0);
pub const TOY_HUE_B: (f64, f64) = (190.0, 250.0);

/// Synthetic two-domain dataset: a single colored shape on black. Geometry
/// (position and size) follows the same distribution in both domains; color
/// and primitive differ (warm squares in A, cool circles in B).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub n_per_domain: usize,
    /// How many of the `n_per_domain` images go to the test split.
    pub n_test: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl ToySpec {
    /// Holds out a quarter of the images (at least one) for testing.
    pub fn new(n_per_domain: usize, image_size: usize, seed: u64) -> Self {
        Self {
            n_per_domain,
            n_test: (n_per_domain / 4).max(1),
            image_size,
            seed,
        }
    }

    pub fn n_train(&self) -> usize {
        self.n_per_domain - self.n_test
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_domain < 4 {
            return Err(Error::Config(format!(
                "toy datasets need at least 4 images per domain, got {}",
                self.n_per_domain
            )));
        }
        if self.n_test == 0 || self.n_test >= self.n_per_domain {
            return Err(Error::Config(format!(
                "n_test must lie in [1, {}), got {}",
                self.n_per_domain, self.n_test
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("toy images must be at least 16 px, got {}", self.image_size)));
        }
        Ok(())
    }
}

/// Geometry and color of one toy image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRecord {
    pub filename: String,
    pub domain: String,
    pub shape_x: f64,
    pub shape_y: f64,
    pub shape_size: f64,
    pub hue: f64,
}

/// HSV (hue in degrees, s and v in [0, 1]) to 8-bit RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Hue in degrees of an RGB triple in `[0, 1]`; `None` for grays.
pub fn rgb_hue(r: f64, g: f64, b: f64) -> Option<f64> {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 1e-12 {
        return None;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(60.0 * h)
}

/// Renders one toy image. `(cx, cy)` is the shape center in pixel
/// coordinates (pixel `i` covers `[i, i + 1)`), `size` its side or diameter.
pub fn render_toy(domain: DomainId, image_size: usize, cx: f64, cy: f64, size: f64, hue: f64) -> RgbImage {
    let color = Rgb(hsv_to_rgb(hue, 1.0, 1.0));
    let half = size / 2.0;
    let s = image_size as u32;
    RgbImage::from_fn(s, s, |x, y| {
        let (dx, dy) = (f64::from(x) + 0.5 - cx, f64::from(y) + 0.5 - cy);
        let inside = match domain {
            DomainId::A => dx.abs() <= half && dy.abs() <= half,
            DomainId::B => dx * dx + dy * dy <= half * half,
        };
        if inside {
            color
        } else {
            Rgb([0, 0, 0])
        }
    })
}

/// Draws the content factors of one image. The same function serves both
/// domains, so geometry is identically distributed across them.
fn draw_geometry<R: Rng>(rng: &mut R, image_size: usize) -> (f64, f64, f64) {
    let s = image_size as f64;
    let size = rng.random_range(0.25 * s..=0.4 * s);
    let margin = size / 2.0 + 1.0;
    let cx = rng.random_range(margin..=s - margin);
    let cy = rng.random_range(margin..=s - margin);
    (cx, cy, size)
}

/// Generates the toy records without touching the disk.
pub fn toy_records(spec: &ToySpec) -> Result<Vec<(ToyRecord, RgbImage)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(2 * spec.n_per_domain);
    for d in DomainId::BOTH {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[STREAM_TOY, d as u64]));
        let (lo, hi) = match d {
            DomainId::A => TOY_HUE_A,
            DomainId::B => TOY_HUE_B,
        };
        for i in 0..spec.n_per_domain {
            let (cx, cy, size) = draw_geometry(&mut rng, spec.image_size);
            let hue = rng.random_range(lo..=hi);
            let split = if i < spec.n_train() { Split::Train } else { Split::Test };
            let filename = format!("{}/{}_{i:04}.png", split.folder(d), d.to_string().to_lowercase());
            let img = render_toy(d, spec.image_size, cx, cy, size, hue);
            let record = ToyRecord {
                filename,
                domain: d.to_string(),
                shape_x: cx,
                shape_y: cy,
                shape_size: size,
                hue,
            };
            out.push((record, img));
        }
    }
    Ok(out)
}

/// Writes the toy dataset under `root` and returns its manifest rows.
pub fn make_toy_dataset(spec: &ToySpec, root: &Path) -> Result<Vec<ToyRecord>> {
    let records = toy_records(spec)?;
    for split in [Split::Train, Split::Test] {
        for d in DomainId::BOTH {
            let dir = root.join(split.folder(d));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
    }
    let manifest = root.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    for (rec, img) in &records {
        img.save(root.join(&rec.filename))?;
        w.serialize(rec)
            .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(records.into_iter().map(|(r, _)| r).collect())
}

/// Reads a toy manifest back.
pub fn read_manifest(root: &Path) -> Result<Vec<ToyRecord>> {
    let path = root.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Dataset(format!("{}: {e}", path.display()))))
        .collect()
}

// ---- toy measurements ---------------------------------------------------------------

/// Pixels brighter than this (max channel, in `[0, 1]`) count as foreground.
pub const FOREGROUND_THRESHOLD: f64 = 0.25;

/// `(x, y, r, g, b)` of every foreground pixel of image `i`, colors in `[0, 1]`.
fn foreground(batch: &ImageBatch, i: usize) -> Vec<(f64, f64, [f64; 3])> {
    let [_, _, h, w] = batch.tensor().dims4().expect("image batches are 4-D");
    let plane = h * w;
    let data = &batch.tensor().data()[i * IMAGE_CHANNELS * plane..(i + 1) * IMAGE_CHANNELS * plane];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let at = y * w + x;
            let rgb = [0, 1, 2].map(|c| (f64::from(data[c * plane + at]) + 1.0) / 2.0);
            if rgb.iter().copied().fold(0.0, f64::max) > FOREGROUND_THRESHOLD {
                out.push((x as f64 + 0.5, y as f64 + 0.5, rgb));
            }
        }
    }
    out
}

/// Centroid of the foreground of image `i`, or `None` if it is all background.
pub fn shape_centroid(batch: &ImageBatch, i: usize) -> Option<(f64, f64)> {
    let fg = foreground(batch, i);
    if fg.is_empty() {
        return None;
    }
    let n = fg.len() as f64;
    let (sx, sy) = fg.iter().fold((0.0, 0.0), |(a, b), (x, y, _)| (a + x, b + y));
    Some((sx / n, sy / n))
}

/// Circular mean hue of the foreground of image `i`, in `[0, 360)`.
pub fn mean_hue(batch: &ImageBatch, i: usize) -> Option<f64> {
    let (mut sx, mut sy) = (0.0, 0.0);
    for (_, _, [r, g, b]) in foreground(batch, i) {
        if let Some(h) = rgb_hue(r, g, b) {
            let rad = h.to_radians();
            sx += rad.cos();
            sy += rad.sin();
        }
    }
    if sx == 0.0 && sy == 0.0 {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Assigns image `i` to the toy domain whose hue range is closer: warm hues
/// (`[320, 360)` and `[0, 120)`) are A, the rest B. `None` when the image
/// has no colored foreground.
pub fn classify_hue(batch: &ImageBatch, i: usize) -> Option<DomainId> {
    let h = mean_hue(batch, i)?;
    Some(if !(120.0..320.0).contains(&h) { DomainId::A } else { DomainId::B })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trips_every_level() {
        for v in 0..=255u8 {
            let n = normalize(v);
            assert!((-1.0..=1.0).contains(&n));
            assert_eq!(denormalize(n), v);
        }
    }

    #[test]
    fn hsv_hue_round_trip() {
        for h in [0.0, 10.0, 45.0, 200.0, 250.0, 359.0] {
            let [r, g, b] = hsv_to_rgb(h, 1.0, 1.0);
            let back = rgb_hue(f64::from(r) / 255.0, f64::from(g) / 255.0, f64::from(b) / 255.0).unwrap();
            let diff = (back - h).abs().min(360.0 - (back - h).abs());
            assert!(diff < 1.0, "{h} -> {back}");
        }
        assert_eq!(rgb_hue(0.5, 0.5, 0.5), None);
    }

    #[test]
    fn toy_validation() {
        assert!(ToySpec::new(2, 32, 0).validate().is_err());
        assert!(ToySpec::new(4, 32, 0).validate().is_ok());
        let mut s = ToySpec::new(8, 32, 0);
        s.n_test = 8;
        assert!(s.validate().is_err());
    }

    #[test]
    fn toy_centroid_and_hue_detectors() {
        let img = render_toy(DomainId::A, 32, 12.0, 20.0, 10.0, 30.0);
        let b = images_to_batch(&[img]).unwrap();
        let (x, y) = shape_centroid(&b, 0).unwrap();
        assert!((x - 12.0).abs() < 0.5 && (y - 20.0).abs() < 0.5, "{x} {y}");
        assert_eq!(classify_hue(&b, 0), Some(DomainId::A));
        let img = render_toy(DomainId::B, 32, 16.0, 16.0, 12.0, 220.0);
        let b = images_to_batch(&[img]).unwrap();
        assert_eq!(classify_hue(&b, 0), Some(DomainId::B));
        let black = images_to_batch(&[RgbImage::new(8, 8)]).unwrap();
        assert_eq!(shape_centroid(&black, 0), None);
        assert_eq!(classify_hue(&black, 0), None);
    }

    #[test]
    fn sampling_is_stateless_and_covers_each_epoch() {
        let imgs: Vec<RgbImage> = (0..5u8)
            .map(|i| RgbImage::from_pixel(8, 8, Rgb([i * 40, 0, 0])))
            .collect();
        let pool = ImagePool::from_images(DomainId::A, imgs, Augment::none(8)).unwrap();
        let firsts: Vec<u8> = (1..=5)
            .map(|step| batch_to_images(&pool.batch(1, step, 3).unwrap())[0].get_pixel(0, 0)[0])
            .collect();
        let mut sorted = firsts.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 40, 80, 120, 160]);
        assert_eq!(pool.batch(2, 7, 3).unwrap(), pool.batch(2, 7, 3).unwrap());
    }

    #[test]
    fn augmentation_keeps_size_and_range() {
        let img = RgbImage::from_fn(12, 12, |x, y| Rgb([(x * 20) as u8, (y * 20) as u8, 7]));
        let aug = Augment {
            image_size: 8,
            load_size: Some(12),
            random_crop: true,
            horizontal_flip: true,
        };
        let pool = ImagePool::from_images(DomainId::B, vec![img], aug).unwrap();
        for step in 1..20 {
            let b = pool.batch(3, step, 1).unwrap();
            assert_eq!(b.shape(), &[3, 3, 8, 8]);
        }
    }
}
