//! Patch-level Fréchet distance between real and generated image sets.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{CurationError, Frame};
use crate::image::{ImageError, ImageTensor};
use crate::par::{self, Execution};
use crate::providers::{EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum PfidError {
    #[error("patch {patch}px does not fit a {height}x{width} image")]
    PatchTooLarge { patch: usize, height: usize, width: usize },
    #[error("invalid patch config: {0}")]
    Config(String),
    #[error("{side}: {count} samples, need at least {needed}")]
    Insufficient { side: &'static str, count: usize, needed: usize },
    #[error("feature dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix has a negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("{key}: {source}")]
    Provider { key: String, source: ProviderError },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Frame(#[from] CurationError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchSampling {
    /// Every anchor on the stride grid, row-major.
    #[default]
    Raster,
    /// Anchors drawn uniformly without replacement from all valid positions,
    /// up to `max_patches_per_image`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub max_patches_per_image: usize,
    pub sampling: PatchSampling,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 512,
            stride: 512,
            max_patches_per_image: 64,
            sampling: PatchSampling::Raster,
            seed: 0,
        }
    }
}

impl PatchConfig {
    fn validate(&self) -> Result<(), PfidError> {
        if self.patch_size == 0 || self.stride == 0 || self.max_patches_per_image == 0 {
            return Err(PfidError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Top-left corners `(y, x)` of the patches taken from an `h × w` image.
///
/// `image_index` decorrelates random draws between images while keeping them
/// independent of processing order.
pub fn patch_anchors(h: usize, w: usize, cfg: &PatchConfig, image_index: u64) -> Result<Vec<(usize, usize)>, PfidError> {
    cfg.validate()?;
    let p = cfg.patch_size;
    if p > h || p > w {
        return Err(PfidError::PatchTooLarge { patch: p, height: h, width: w });
    }
    Ok(match cfg.sampling {
        PatchSampling::Raster => (0..=h - p)
            .step_by(cfg.stride)
            .flat_map(|y| (0..=w - p).step_by(cfg.stride).map(move |x| (y, x)))
            .collect(),
        PatchSampling::Random => {
            let (ny, nx) = (h - p + 1, w - p + 1);
            let total = ny * nx;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(image_index);
            let amount = cfg.max_patches_per_image.min(total);
            let mut picked = rand::seq::index::sample(&mut rng, total, amount).into_vec();
            // keep the draw but present anchors in raster order
            picked.sort_unstable();
            picked.into_iter().map(|i| (i / nx, i % nx)).collect()
        }
    })
}

/// A cropped patch and where it came from.
#[derive(Debug, Clone)]
pub struct Patch {
    pub y: usize,
    pub x: usize,
    pub image: ImageTensor,
}

pub fn extract_patches(img: &ImageTensor, cfg: &PatchConfig, image_index: u64) -> Result<Vec<Patch>, PfidError> {
    patch_anchors(img.height(), img.width(), cfg, image_index)?
        .into_iter()
        .map(|(y, x)| {
            Ok(Patch {
                y,
                x,
                image: img.crop(y, x, cfg.patch_size, cfg.patch_size)?,
            })
        })
        .collect()
}

/// Streaming mean and scatter accumulator that merges associatively.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), PfidError> {
        if x.len() != self.dim() {
            return Err(PfidError::Dimension(x.len(), self.dim()));
        }
        self.count += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = &x - &self.mean;
        self.scatter.ger(1.0, &delta, &delta2, 1.0);
        Ok(())
    }

    /// Pairwise combination of two partial accumulators.
    pub fn merge(mut self, other: &MomentAccumulator) -> Result<Self, PfidError> {
        if other.dim() != self.dim() {
            return Err(PfidError::Dimension(other.dim(), self.dim()));
        }
        if other.count == 0 {
            return Ok(self);
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.scatter += &other.scatter;
        self.scatter.ger(na * nb / n, &delta, &delta, 1.0);
        self.count += other.count;
        Ok(self)
    }

    pub fn finish(&self, side: &'static str) -> Result<GaussianStats, PfidError> {
        if self.count < 2 {
            return Err(PfidError::Insufficient {
                side,
                count: self.count,
                needed: 2,
            });
        }
        let cov = &self.scatter / (self.count - 1) as f64;
        Ok(GaussianStats {
            mean: self.mean.clone(),
            covariance: (&cov + cov.transpose()) * 0.5,
            count: self.count,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

/// Sample mean and unbiased covariance.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats, PfidError> {
    let dim = features.first().map_or(0, Vec::len);
    let mut acc = MomentAccumulator::new(dim);
    for f in features {
        acc.push(f)?;
    }
    acc.finish("features")
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Eigenvalues slightly below zero (relative to the spectrum's scale) are
/// treated as rounding noise and clipped.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, PfidError> {
    let scale = max_abs(m).max(1.0);
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-8 * scale {
        return Err(PfidError::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if let Some(&neg) = eig.eigenvalues.iter().find(|&&l| l < -1e-10 * top) {
        return Err(PfidError::NegativeEigenvalue(neg));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clipped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, PfidError> {
    if a.mean.len() != b.mean.len() {
        return Err(PfidError::Dimension(a.mean.len(), b.mean.len()));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let sa = matrix_sqrt_psd(&a.covariance)?;
    let inner = &sa * &b.covariance * &sa;
    let cross = matrix_sqrt_psd(&((&inner + inner.transpose()) * 0.5))?;
    let d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

/// One image of an evaluation set; `key` names its features in a provider
/// directory (`<key>_<y>_<x>.emb` per patch).
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub key: String,
    pub frame: Frame,
}

/// Sorted PNG/JPEG files of a directory, keyed by file stem.
pub fn image_set_from_dir(dir: &Path) -> Result<Vec<EvalImage>, PfidError> {
    let io = |source| PfidError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()).map_err(io))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| {
        p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
    });
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| EvalImage {
            key: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            frame: Frame::Path(p),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PfidReport {
    pub score: f64,
    pub real_images: usize,
    pub generated_images: usize,
    pub real_patches: usize,
    pub generated_patches: usize,
    pub feature_dim: usize,
    pub provider: String,
    pub patch: PatchConfig,
}

fn side_moments(
    side: &'static str,
    images: &[EvalImage],
    provider: &dyn EmbeddingProvider,
    cfg: &PatchConfig,
    mode: Execution,
) -> Result<MomentAccumulator, PfidError> {
    if images.is_empty() {
        return Err(PfidError::EmptySet(side));
    }
    let indexed: Vec<(u64, &EvalImage)> = images.iter().enumerate().map(|(i, e)| (i as u64, e)).collect();
    let partials = par::map(mode, &indexed, |&(index, entry)| -> Result<Vec<Vec<f64>>, PfidError> {
        let img = entry.frame.image()?;
        extract_patches(&img, cfg, index)?
            .iter()
            .map(|p| {
                let key = format!("{}_{}_{}", entry.key, p.y, p.x);
                provider
                    .embed(&p.image, Some(&key))
                    .map_err(|source| PfidError::Provider { key, source })
            })
            .collect()
    });
    // Fold in input order so the result does not depend on scheduling.
    let mut acc: Option<MomentAccumulator> = None;
    for part in partials {
        for f in part? {
            acc.get_or_insert_with(|| MomentAccumulator::new(f.len())).push(&f)?;
        }
    }
    acc.ok_or(PfidError::EmptySet(side))
}

/// Patch-FID between two image sets under `provider` features.
pub fn pfid(
    real: &[EvalImage],
    generated: &[EvalImage],
    provider: &dyn EmbeddingProvider,
    cfg: &PatchConfig,
    mode: Execution,
) -> Result<PfidReport, PfidError> {
    cfg.validate()?;
    let ra = side_moments("real", real, provider, cfg, mode)?;
    let ga = side_moments("generated", generated, provider, cfg, mode)?;
    if ra.dim() != ga.dim() {
        return Err(PfidError::Dimension(ra.dim(), ga.dim()));
    }
    let needed = ra.dim() + 1;
    for (side, acc) in [("real", &ra), ("generated", &ga)] {
        if acc.count() < needed {
            return Err(PfidError::Insufficient {
                side,
                count: acc.count(),
                needed,
            });
        }
    }
    let score = frechet_distance(&ra.finish("real")?, &ga.finish("generated")?)?;
    Ok(PfidReport {
        score,
        real_images: real.len(),
        generated_images: generated.len(),
        real_patches: ra.count(),
        generated_patches: ga.count(),
        feature_dim: ra.dim(),
        provider: provider.id(),
        patch: *cfg,
    })
}

/// Fréchet distance between two feature clouds, bypassing images.
pub fn pfid_from_features(real: &[Vec<f64>], generated: &[Vec<f64>], mode: Execution) -> Result<f64, PfidError> {
    let stats = |side, xs: &[Vec<f64>]| -> Result<GaussianStats, PfidError> {
        let dim = xs.first().map_or(0, Vec::len);
        let chunks: Vec<&[Vec<f64>]> = xs.chunks(1024).collect();
        let parts = par::map(mode, &chunks, |chunk| {
            let mut acc = MomentAccumulator::new(dim);
            for x in *chunk {
                acc.push(x)?;
            }
            Ok::<_, PfidError>(acc)
        });
        let mut acc = MomentAccumulator::new(dim);
        for p in parts {
            acc = acc.merge(&p?)?;
        }
        acc.finish(side)
    };
    frechet_distance(&stats("real", real)?, &stats("generated", generated)?)
}
