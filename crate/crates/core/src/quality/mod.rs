//! Single-image quality measurements: sharpness, exposure, saturation and
//! GLCM texture, plus the combined pass/fail verdict.

mod assess;
mod color;
mod glcm;
mod sharpness;

pub use assess::{
    assess_quality, assess_quality_with, checks, judge, measure, names, FeatureBounds, QualityOptions, QualityThresholds,
    QualityVerdict, TextureBounds,
};
pub use color::{exposure_stats, saturation_stats};
pub use glcm::{co_occurrence, glcm_features, TextureFeatures, DEFAULT_GLCM_LEVELS, DEFAULT_GLCM_OFFSETS};
pub use sharpness::tenengrad;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, ImageError, ImageTensor};

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("image {height}x{width} is too small (needs at least {min}x{min})")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("empty image")]
    Empty,
    #[error("expected a 3-channel image, got {0} channel(s)")]
    NotColor(usize),
    #[error("GLCM needs at least 2 levels, got {0}")]
    Levels(usize),
    #[error("offset ({dy},{dx}) is zero or does not fit a {height}x{width} image")]
    Offset { dy: isize, dx: isize, height: usize, width: usize },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn is_ordered(&self) -> bool {
        self.low <= self.high
    }
}

const LUMA_R: f64 = 0.2126;
const LUMA_G: f64 = 0.7152;
const LUMA_B: f64 = 0.0722;

/// Luminance plane: identity for 1-channel images, Rec.709 luma for RGB.
pub fn to_grayscale(img: &ImageTensor) -> Result<GrayImage, QualityError> {
    let (h, w, c) = img.dims();
    let data = match c {
        1 => img.to_unit(),
        3 => {
            let px = img.to_unit();
            px.chunks_exact(3)
                .map(|p| (LUMA_R * p[0] + LUMA_G * p[1] + LUMA_B * p[2]).clamp(0.0, 1.0))
                .collect()
        }
        other => return Err(ImageError::Channels(other).into()),
    };
    Ok(GrayImage::new(h, w, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_passthrough() {
        let img = ImageTensor::from_unit(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(to_grayscale(&img).unwrap().data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn white_and_red() {
        let white = ImageTensor::from_unit(2, 2, 3, vec![1.0; 12]).unwrap();
        assert!(to_grayscale(&white).unwrap().data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let red = ImageTensor::from_fn(2, 3, 3, |_, _, c| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!(to_grayscale(&red).unwrap().data().iter().all(|&v| v == 0.2126));
    }
}
