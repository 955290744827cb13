use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::image::GrayImage;

pub const DEFAULT_GLCM_LEVELS: usize = 16;
/// Distance-1 neighbours in the four directions 0°, 90°, 45°, 135°.
pub const DEFAULT_GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Haralick-style scalars computed from one normalized co-occurrence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureFeatures {
    pub contrast: f64,
    pub energy: f64,
    pub homogeneity: f64,
    pub entropy: f64,
}

#[inline]
fn quantize(v: f64, levels: usize) -> usize {
    ((v * levels as f64) as usize).min(levels - 1)
}

/// Symmetric co-occurrence counts (row-major `levels × levels`) accumulated
/// jointly over every offset.
pub fn co_occurrence(img: &GrayImage, levels: usize, offsets: &[(isize, isize)]) -> Result<Vec<u64>, QualityError> {
    if levels < 2 {
        return Err(QualityError::Levels(levels));
    }
    let (h, w) = (img.height(), img.width());
    for &(dy, dx) in offsets {
        if (dy == 0 && dx == 0) || dy.unsigned_abs() >= h || dx.unsigned_abs() >= w {
            return Err(QualityError::Offset {
                dy,
                dx,
                height: h,
                width: w,
            });
        }
    }
    let q: Vec<usize> = img.data().iter().map(|&v| quantize(v, levels)).collect();
    let mut counts = vec![0u64; levels * levels];
    for &(dy, dx) in offsets {
        let y_range = if dy >= 0 { 0..h - dy as usize } else { dy.unsigned_abs()..h };
        let x_range = if dx >= 0 { 0..w - dx as usize } else { dx.unsigned_abs()..w };
        for y in y_range {
            let y2 = (y as isize + dy) as usize;
            for x in x_range.clone() {
                let x2 = (x as isize + dx) as usize;
                let (a, b) = (q[y * w + x], q[y2 * w + x2]);
                counts[a * levels + b] += 1;
                counts[b * levels + a] += 1;
            }
        }
    }
    Ok(counts)
}

/// Quantize luminance into `levels` uniform bins, build one symmetric joint
/// co-occurrence matrix over all `offsets`, normalize, and summarize it.
pub fn glcm_features(img: &GrayImage, levels: usize, offsets: &[(isize, isize)]) -> Result<TextureFeatures, QualityError> {
    let counts = co_occurrence(img, levels, offsets)?;
    Ok(features_from_counts(&counts, levels))
}

pub(crate) fn features_from_counts(counts: &[u64], levels: usize) -> TextureFeatures {
    let total: u64 = counts.iter().sum();
    let mut f = TextureFeatures {
        contrast: 0.0,
        energy: 0.0,
        homogeneity: 0.0,
        entropy: 0.0,
    };
    if total == 0 {
        return f;
    }
    let norm = total as f64;
    for i in 0..levels {
        for j in 0..levels {
            let c = counts[i * levels + j];
            if c == 0 {
                continue;
            }
            let p = c as f64 / norm;
            let d = i.abs_diff(j) as f64;
            f.contrast += p * d * d;
            f.energy += p * p;
            f.homogeneity += p / (1.0 + d);
            f.entropy -= p * p.ln();
        }
    }
    f
}
