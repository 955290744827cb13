use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::glcm::{glcm_features, DEFAULT_GLCM_LEVELS, DEFAULT_GLCM_OFFSETS};
use super::{exposure_stats, saturation_stats, tenengrad, to_grayscale, QualityError, Range};
use crate::image::ImageTensor;

/// Optional lower/upper bound on each GLCM feature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureBounds {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl FeatureBounds {
    pub fn contains(&self, v: f64) -> bool {
        self.min.is_none_or(|m| v >= m) && self.max.is_none_or(|m| v <= m)
    }

    fn is_ordered(&self) -> bool {
        match (self.min, self.max) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureBounds {
    pub contrast: FeatureBounds,
    pub energy: FeatureBounds,
    pub homogeneity: FeatureBounds,
    pub entropy: FeatureBounds,
}

impl Default for TextureBounds {
    /// Only the low-variation tail is rejected.
    fn default() -> Self {
        Self {
            contrast: FeatureBounds::default(),
            energy: FeatureBounds::default(),
            homogeneity: FeatureBounds::default(),
            entropy: FeatureBounds {
                min: Some(0.5),
                max: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    pub min_sharpness: f64,
    pub luminance_range: Range,
    pub saturation_range: Range,
    pub texture_bounds: TextureBounds,
    pub max_aspect_ratio: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            min_sharpness: 1e-4,
            luminance_range: Range::new(0.15, 0.85),
            saturation_range: Range::new(0.02, 0.85),
            texture_bounds: TextureBounds::default(),
            max_aspect_ratio: 2.5,
        }
    }
}

impl QualityThresholds {
    pub fn validate(&self) -> Result<(), QualityError> {
        let t = &self.texture_bounds;
        if !self.luminance_range.is_ordered() || !self.saturation_range.is_ordered() {
            return Err(QualityError::Thresholds("luminance/saturation range has low > high".into()));
        }
        if ![t.contrast, t.energy, t.homogeneity, t.entropy].iter().all(FeatureBounds::is_ordered) {
            return Err(QualityError::Thresholds("texture bound has min > max".into()));
        }
        if !(self.max_aspect_ratio >= 1.0) {
            return Err(QualityError::Thresholds(format!(
                "max_aspect_ratio must be >= 1, got {}",
                self.max_aspect_ratio
            )));
        }
        Ok(())
    }
}

/// How measurements are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityOptions {
    pub glcm_levels: usize,
    pub glcm_offsets: Vec<(isize, isize)>,
    /// Measure square tiles of this side and average, instead of the whole
    /// image at once. Bounds peak memory on very large inputs.
    pub tile_size: Option<usize>,
}

impl Default for QualityOptions {
    fn default() -> Self {
        Self {
            glcm_levels: DEFAULT_GLCM_LEVELS,
            glcm_offsets: DEFAULT_GLCM_OFFSETS.to_vec(),
            tile_size: None,
        }
    }
}

pub mod names {
    pub const TENENGRAD: &str = "tenengrad";
    pub const MEAN_LUMINANCE: &str = "mean_luminance";
    pub const MEAN_SATURATION: &str = "mean_saturation";
    pub const GLCM_CONTRAST: &str = "glcm_contrast";
    pub const GLCM_ENERGY: &str = "glcm_energy";
    pub const GLCM_HOMOGENEITY: &str = "glcm_homogeneity";
    pub const GLCM_ENTROPY: &str = "glcm_entropy";
    pub const ASPECT_RATIO: &str = "aspect_ratio";
}

/// Check identifiers reported in [`QualityVerdict::failed_checks`].
pub mod checks {
    pub const SHARPNESS: &str = "sharpness";
    pub const EXPOSURE: &str = "exposure";
    pub const SATURATION: &str = "saturation";
    pub const TEXTURE: &str = "texture";
    pub const ASPECT_RATIO: &str = "aspect_ratio";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVerdict {
    pub passed: bool,
    pub failed_checks: Vec<String>,
    pub measurements: BTreeMap<String, f64>,
}

fn measure_whole(img: &ImageTensor, opts: &QualityOptions) -> Result<[f64; 7], QualityError> {
    let gray = to_grayscale(img)?;
    let sharp = tenengrad(&gray)?;
    let lum = exposure_stats(&gray)?;
    let sat = if img.channels() == 3 { saturation_stats(img)?.0 } else { 0.0 };
    let tex = glcm_features(&gray, opts.glcm_levels, &opts.glcm_offsets)?;
    Ok([sharp, lum, sat, tex.contrast, tex.energy, tex.homogeneity, tex.entropy])
}

/// Compute the full measurement map for one image.
///
/// One-channel images report `mean_saturation = 0`; the saturation check
/// does not apply to them.
pub fn measure(img: &ImageTensor, opts: &QualityOptions) -> Result<BTreeMap<String, f64>, QualityError> {
    let values = match opts.tile_size {
        Some(tile) if tile < img.height().max(img.width()) => {
            let tile = tile.max(3);
            let mut acc = [0.0; 7];
            let mut weight = 0.0;
            for y0 in (0..img.height()).step_by(tile) {
                for x0 in (0..img.width()).step_by(tile) {
                    let h = tile.min(img.height() - y0);
                    let w = tile.min(img.width() - x0);
                    // Slivers too thin for Sobel or the GLCM offsets are skipped.
                    if h < 3 || w < 3 {
                        continue;
                    }
                    let m = measure_whole(&img.crop(y0, x0, h, w)?, opts)?;
                    let a = (h * w) as f64;
                    for (s, v) in acc.iter_mut().zip(m) {
                        *s += a * v;
                    }
                    weight += a;
                }
            }
            if weight == 0.0 {
                return Err(QualityError::TooSmall {
                    height: img.height(),
                    width: img.width(),
                    min: 3,
                });
            }
            acc.map(|s| s / weight)
        }
        _ => measure_whole(img, opts)?,
    };
    let keys = [
        names::TENENGRAD,
        names::MEAN_LUMINANCE,
        names::MEAN_SATURATION,
        names::GLCM_CONTRAST,
        names::GLCM_ENERGY,
        names::GLCM_HOMOGENEITY,
        names::GLCM_ENTROPY,
    ];
    let mut map: BTreeMap<String, f64> = keys.iter().map(|k| k.to_string()).zip(values).collect();
    map.insert(names::ASPECT_RATIO.into(), img.aspect_ratio());
    Ok(map)
}

/// Apply thresholds to a measurement map produced by [`measure`].
pub fn judge(measurements: BTreeMap<String, f64>, is_color: bool, t: &QualityThresholds) -> QualityVerdict {
    let m = |k: &str| measurements.get(k).copied().unwrap_or(f64::NAN);
    let mut failed = Vec::new();
    if !(m(names::TENENGRAD) >= t.min_sharpness) {
        failed.push(checks::SHARPNESS.to_string());
    }
    if !t.luminance_range.contains(m(names::MEAN_LUMINANCE)) {
        failed.push(checks::EXPOSURE.to_string());
    }
    if is_color && !t.saturation_range.contains(m(names::MEAN_SATURATION)) {
        failed.push(checks::SATURATION.to_string());
    }
    let tb = &t.texture_bounds;
    let texture_ok = tb.contrast.contains(m(names::GLCM_CONTRAST))
        && tb.energy.contains(m(names::GLCM_ENERGY))
        && tb.homogeneity.contains(m(names::GLCM_HOMOGENEITY))
        && tb.entropy.contains(m(names::GLCM_ENTROPY));
    if !texture_ok {
        failed.push(checks::TEXTURE.to_string());
    }
    if !(m(names::ASPECT_RATIO) <= t.max_aspect_ratio) {
        failed.push(checks::ASPECT_RATIO.to_string());
    }
    QualityVerdict {
        passed: failed.is_empty(),
        failed_checks: failed,
        measurements,
    }
}

/// Measure and judge in one step.
pub fn assess_quality(img: &ImageTensor, thresholds: &QualityThresholds) -> Result<QualityVerdict, QualityError> {
    assess_quality_with(img, thresholds, &QualityOptions::default())
}

pub fn assess_quality_with(
    img: &ImageTensor,
    thresholds: &QualityThresholds,
    opts: &QualityOptions,
) -> Result<QualityVerdict, QualityError> {
    thresholds.validate()?;
    let m = measure(img, opts)?;
    Ok(judge(m, img.channels() == 3, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, 3, |y, x, c| {
            let base = 0.5 + 0.2 * ((y as f64 * 0.4).sin() * (x as f64 * 0.3 + c as f64).cos());
            base + 0.1 * (rng.random::<f64>() - 0.5)
        })
        .unwrap()
    }

    #[test]
    fn mid_gray_fails_clarity_and_texture() {
        let img = ImageTensor::from_unit(16, 16, 3, vec![0.5; 16 * 16 * 3]).unwrap();
        let v = assess_quality(&img, &QualityThresholds::default()).unwrap();
        assert!(!v.passed);
        assert!(v.failed_checks.contains(&"sharpness".to_string()));
        assert!(v.failed_checks.contains(&"texture".to_string()));
        assert!(!v.failed_checks.contains(&"exposure".to_string()));
        assert_eq!(v.measurements["mean_luminance"], 0.5);
        assert_eq!(v.measurements.len(), 8);
    }

    #[test]
    fn white_is_overexposed() {
        let img = ImageTensor::from_unit(8, 8, 1, vec![1.0; 64]).unwrap();
        let v = assess_quality(&img, &QualityThresholds::default()).unwrap();
        assert!(v.failed_checks.contains(&"exposure".to_string()));
    }

    #[test]
    fn self_calibrated_fixture_passes() {
        let img = textured(9, 48, 64);
        let m = measure(&img, &QualityOptions::default()).unwrap();
        let around = |k: &str| FeatureBounds {
            min: Some(m[k] * 0.9),
            max: Some(m[k] * 1.1),
        };
        let t = QualityThresholds {
            min_sharpness: m["tenengrad"] * 0.9,
            luminance_range: Range::new(m["mean_luminance"] - 0.05, m["mean_luminance"] + 0.05),
            saturation_range: Range::new(m["mean_saturation"] - 0.05, m["mean_saturation"] + 0.05),
            texture_bounds: TextureBounds {
                contrast: around("glcm_contrast"),
                energy: around("glcm_energy"),
                homogeneity: around("glcm_homogeneity"),
                entropy: around("glcm_entropy"),
            },
            max_aspect_ratio: 2.5,
        };
        let v = assess_quality(&img, &t).unwrap();
        assert!(v.passed, "{:?}", v.failed_checks);
        assert!(v.failed_checks.is_empty());
    }

    #[test]
    fn deterministic() {
        let img = textured(4, 32, 32);
        let t = QualityThresholds::default();
        assert_eq!(assess_quality(&img, &t).unwrap(), assess_quality(&img, &t).unwrap());
    }

    #[test]
    fn aspect_ratio_check() {
        let img = textured(2, 8, 40);
        let v = assess_quality(&img, &QualityThresholds::default()).unwrap();
        assert!(v.failed_checks.contains(&"aspect_ratio".to_string()));
        assert_eq!(v.measurements["aspect_ratio"], 5.0);
    }

    #[test]
    fn tiled_mode_is_close_for_stationary_texture() {
        let img = textured(5, 64, 64);
        let whole = measure(&img, &QualityOptions::default()).unwrap();
        let tiled = measure(
            &img,
            &QualityOptions {
                tile_size: Some(32),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((whole["mean_luminance"] - tiled["mean_luminance"]).abs() < 1e-12);
        assert!((whole["tenengrad"] - tiled["tenengrad"]).abs() / whole["tenengrad"] < 0.1);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let t = QualityThresholds {
            max_aspect_ratio: 0.5,
            ..Default::default()
        };
        assert!(t.validate().is_err());
        let t = QualityThresholds {
            luminance_range: Range::new(0.9, 0.1),
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }
}
