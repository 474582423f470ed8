//! Fréchet distance between activation statistics, the example-guided FID
//! protocol and a paired-output diversity score.
//!
//! The default feature extractor is a fixed-seed random convolutional
//! network, so scores are reproducible without any download but are only
//! comparable with other scores from the same extractor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ImagePool;
use crate::error::{Error, Result};
use crate::model::{sample_style, DomainId, ImageBatch, Model};
use crate::seeding::{derive_seed, STREAM_EVAL};
use crate::tensor::{conv2d_forward, Tensor};

/// Regularization added to both covariances when the matrix square root fails.
pub const SQRT_EPS: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-8;
const PSD_TOL: f64 = -1e-6;

/// Sample mean and unbiased covariance of a set of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    n: usize,
}

impl ActivationStats {
    /// Checks shape, symmetry (within 1e-8) and positive semidefiniteness
    /// (eigenvalues >= -1e-6).
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("statistics need n >= 2, got {n}")));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::shape(&[d, d], &[cov.nrows(), cov.ncols()]));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation statistics".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidInput(format!("covariance is not symmetric (off by {asym})")));
        }
        if d > 0 {
            let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min_eig < PSD_TOL {
                return Err(Error::InvalidInput(format!(
                    "covariance is not positive semidefinite (eigenvalue {min_eig})"
                )));
            }
        }
        Ok(Self { mean, cov, n })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Streaming mean and scatter matrix. Partial accumulators over disjoint
/// parts of a data set merge into the accumulator of the whole.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsAccumulator {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        let d = self.mean.len();
        if row.len() != d {
            return Err(Error::shape(&[d], &[row.len()]));
        }
        self.n += 1;
        let x = DVector::from_column_slice(row);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.scatter += &delta * delta2.transpose();
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(Error::shape(&[self.mean.len()], &[other.mean.len()]));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.scatter += &other.scatter + &delta * delta.transpose() * (na * nb / n);
        self.mean += &delta * (nb / n);
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> Result<ActivationStats> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("statistics need n >= 2, got {}", self.n)));
        }
        let mut cov = &self.scatter / (self.n as f64 - 1.0);
        // Rank-one updates leave rounding-level asymmetry.
        cov = (&cov + cov.transpose()) * 0.5;
        ActivationStats::from_parts(self.mean.clone(), cov, self.n)
    }
}

/// Mean and unbiased covariance of the rows of `features` (`n x d`).
pub fn activation_stats(features: &ArrayView2<f64>) -> Result<ActivationStats> {
    let (n, d) = features.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!("statistics need n >= 2, got {n}")));
    }
    let mut acc = StatsAccumulator::new(d);
    for row in features.rows() {
        acc.push(&row.to_vec())?;
    }
    acc.finish()
}

/// Square root of a symmetric PSD matrix, clamping negative eigenvalues.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// `tr((P Q)^(1/2))`, computed as `tr((P^(1/2) Q P^(1/2))^(1/2))`, which is
/// a symmetric PSD matrix with the same eigenvalues.
fn trace_sqrt_product(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let sp = sqrt_psd(p);
    let m = &sp * q * &sp;
    let m = (&m + m.transpose()) * 0.5;
    let tr: f64 = SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    if tr.is_finite() {
        Ok(tr)
    } else {
        Err(Error::Linalg("matrix square root produced a non-finite trace".into()))
    }
}

/// `||mu_p - mu_q||^2 + tr(S_p + S_q - 2 (S_p S_q)^(1/2))`, clamped at 0.
pub fn frechet_distance(p: &ActivationStats, q: &ActivationStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::shape(&[p.dim()], &[q.dim()]));
    }
    if p.mean == q.mean && p.cov == q.cov {
        return Ok(0.0);
    }
    let mean_term = (&p.mean - &q.mean).norm_squared();
    let tr = match trace_sqrt_product(&p.cov, &q.cov) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("{e}; retrying with {SQRT_EPS} I added to both covariances");
            let eps = DMatrix::identity(p.dim(), p.dim()) * SQRT_EPS;
            trace_sqrt_product(&(&p.cov + &eps), &(&q.cov + &eps))
                .map_err(|e| Error::Linalg(format!("{e} (after regularization)")))?
        }
    };
    let d = mean_term + p.cov.trace() + q.cov.trace() - 2.0 * tr;
    Ok(d.max(0.0))
}

/// Maps images to feature vectors.
pub trait FeatureExtractor {
    /// `n x dim` features of a batch of `n` images.
    fn extract(&self, images: &ImageBatch) -> Result<Array2<f64>>;
    fn dim(&self) -> usize;
    /// Identifies the extractor in evaluation reports.
    fn id(&self) -> String;
}

/// A small random convolutional network with fixed seeded weights. The
/// features are the spatially averaged activations of every layer.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    seed: u64,
    layers: Vec<(Tensor, Tensor)>,
}

const EXTRACTOR_WIDTHS: [usize; 3] = [16, 32, 64];

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let layers = EXTRACTOR_WIDTHS
            .iter()
            .map(|&cout| {
                let fan_in = (cin * 16) as f32;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                let w: Vec<f32> = (0..cout * cin * 16).map(|_| normal.sample(&mut rng)).collect();
                let w = Tensor::new(vec![cout, cin, 4, 4], w).expect("shape matches data");
                let b = Tensor::zeros(&[cout]);
                cin = cout;
                (w, b)
            })
            .collect();
        Self { seed, layers }
    }
}

impl Default for RandomConvExtractor {
    fn default() -> Self {
        Self::new(0)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn extract(&self, images: &ImageBatch) -> Result<Array2<f64>> {
        let n = images.batch();
        let mut feats = Array2::zeros((n, self.dim()));
        let mut x = images.tensor().clone();
        let mut col = 0;
        for (w, b) in &self.layers {
            let (mut y, _) = conv2d_forward(&x, w, b, 2, 1, false);
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            let [_, c, h, wd] = y.dims4()?;
            let plane = h * wd;
            for i in 0..n {
                for ch in 0..c {
                    let start = (i * c + ch) * plane;
                    let s: f64 = y.data()[start..start + plane].iter().map(|&v| f64::from(v)).sum();
                    feats[[i, col + ch]] = s / plane as f64;
                }
            }
            col += c;
            x = y;
        }
        Ok(feats)
    }

    fn dim(&self) -> usize {
        EXTRACTOR_WIDTHS.iter().sum()
    }

    fn id(&self) -> String {
        format!("random-conv(seed={}, widths={:?})", self.seed, EXTRACTOR_WIDTHS)
    }
}

/// Adapts externally computed features (for example from a pretrained
/// classifier) to [`FeatureExtractor`].
pub struct FnExtractor<F> {
    name: String,
    dim: usize,
    f: F,
}

impl<F> FnExtractor<F>
where
    F: Fn(&ImageBatch) -> Result<Array2<f64>>,
{
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            dim,
            f,
        }
    }
}

impl<F> FeatureExtractor for FnExtractor<F>
where
    F: Fn(&ImageBatch) -> Result<Array2<f64>>,
{
    fn extract(&self, images: &ImageBatch) -> Result<Array2<f64>> {
        let out = (self.f)(images)?;
        if out.dim() != (images.batch(), self.dim) {
            return Err(Error::shape(&[images.batch(), self.dim], &[out.nrows(), out.ncols()]));
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        self.name.clone()
    }
}

fn accumulate(acc: &mut StatsAccumulator, extractor: &dyn FeatureExtractor, images: &ImageBatch) -> Result<()> {
    for row in extractor.extract(images)?.rows() {
        acc.push(&row.to_vec())?;
    }
    Ok(())
}

/// Fréchet distance between the feature statistics of two image sets.
pub fn fid_between(extractor: &dyn FeatureExtractor, a: &ImageBatch, b: &ImageBatch) -> Result<f64> {
    let mut sa = StatsAccumulator::new(extractor.dim());
    accumulate(&mut sa, extractor, a)?;
    let mut sb = StatsAccumulator::new(extractor.dim());
    accumulate(&mut sb, extractor, b)?;
    frechet_distance(&sa.finish()?, &sb.finish()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidProtocol {
    pub n_content: usize,
    pub n_styles: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for FidProtocol {
    fn default() -> Self {
        Self {
            n_content: 100,
            n_styles: 10,
            repeats: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub src: DomainId,
    pub dst: DomainId,
    pub extractor: String,
    pub protocol: FidProtocol,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub warnings: Vec<String>,
}

impl FidReport {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("cannot format report: {e}")))
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Example-guided FID: each repeat draws `n_content` source images and
/// renders each with `n_styles` reference images of the target domain; the
/// generated set is scored against every image of `real`. Content and
/// references are both resampled every repeat.
pub fn fid_protocol(
    model: &Model,
    content: &ImagePool,
    real: &ImagePool,
    protocol: &FidProtocol,
    extractor: &dyn FeatureExtractor,
) -> Result<FidReport> {
    let (src, dst) = (content.domain(), real.domain());
    if protocol.n_content == 0 || protocol.n_styles == 0 || protocol.repeats == 0 {
        return Err(Error::Config("FID protocol counts must be >= 1".into()));
    }
    if real.len() < 2 {
        return Err(Error::Dataset("the real set needs at least 2 images".into()));
    }
    let mut warnings = Vec::new();
    let with_replacement = content.len() < protocol.n_content;
    if with_replacement {
        let msg = format!(
            "content set has {} images, fewer than {}; sampling with replacement",
            content.len(),
            protocol.n_content
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let all: Vec<usize> = (0..real.len()).collect();
    let mut real_acc = StatsAccumulator::new(extractor.dim());
    accumulate(&mut real_acc, extractor, &real.get(&all)?)?;
    let real_stats = real_acc.finish()?;

    let mut scores = Vec::with_capacity(protocol.repeats);
    for r in 0..protocol.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(protocol.seed, &[STREAM_EVAL, 0, r as u64]));
        let picks: Vec<usize> = if with_replacement {
            (0..protocol.n_content).map(|_| rng.random_range(0..content.len())).collect()
        } else {
            index::sample(&mut rng, content.len(), protocol.n_content).into_vec()
        };
        let mut fake = StatsAccumulator::new(extractor.dim());
        for &i in &picks {
            let refs: Vec<usize> = (0..protocol.n_styles).map(|_| rng.random_range(0..real.len())).collect();
            let x = content.get(&vec![i; protocol.n_styles])?;
            let y = model.translate(&x, &real.get(&refs)?, src, dst)?;
            accumulate(&mut fake, extractor, &y)?;
        }
        scores.push(frechet_distance(&fake.finish()?, &real_stats)?);
    }
    let (mean, std) = mean_std(&scores);
    Ok(FidReport {
        src,
        dst,
        extractor: extractor.id(),
        protocol: *protocol,
        scores,
        mean,
        std,
        warnings,
    })
}

/// Mean squared difference between unit-normalized feature vectors.
pub fn feature_distance(a: &[f64], b: &[f64]) -> f64 {
    let unit = |v: &[f64]| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }).collect::<Vec<_>>()
    };
    let (ua, ub) = (unit(a), unit(b));
    ua.iter().zip(&ub).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// The style codes of diversity pair `k`.
pub fn diversity_pair_seeds(seed: u64, k: usize) -> (u64, u64) {
    (
        derive_seed(seed, &[STREAM_EVAL, 1, k as u64, 0]),
        derive_seed(seed, &[STREAM_EVAL, 1, k as u64, 1]),
    )
}

/// Average feature distance between pairs of outputs that share content
/// and differ in sampled style: `n_pairs` pairs per content image.
pub fn diversity_score(
    model: &Model,
    x_content: &ImageBatch,
    src: DomainId,
    dst: DomainId,
    n_pairs: usize,
    extractor: &dyn FeatureExtractor,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput("n_pairs must be >= 1".into()));
    }
    let (_, c) = model.encode_content(x_content, src)?;
    let h = model.map_content(&c, dst)?;
    let n = x_content.batch();
    let style_dim = model.config().style_dim;
    let mut dists = Vec::with_capacity(n_pairs * n);
    for k in 0..n_pairs {
        let (s1, s2) = diversity_pair_seeds(seed, k);
        let f1 = extractor.extract(&model.generate(&h, &sample_style(n, style_dim, s1)?, dst)?)?;
        let f2 = extractor.extract(&model.generate(&h, &sample_style(n, style_dim, s2)?, dst)?)?;
        for (a, b) in f1.rows().into_iter().zip(f2.rows()) {
            dists.push(feature_distance(&a.to_vec(), &b.to_vec()));
        }
    }
    Ok(mean_of_sorted(&mut dists))
}

/// Mean computed over the sorted values, so it does not depend on the
/// order in which the values were produced.
fn mean_of_sorted(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Diversity over precomputed feature pairs; independent of pair order.
pub fn diversity_from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs".into()));
    }
    let mut d: Vec<f64> = pairs.iter().map(|(a, b)| feature_distance(a, b)).collect();
    Ok(mean_of_sorted(&mut d))
}
