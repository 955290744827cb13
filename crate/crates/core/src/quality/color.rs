use super::QualityError;
use crate::image::{GrayImage, ImageTensor};

/// Mean luminance.
pub fn exposure_stats(img: &GrayImage) -> Result<f64, QualityError> {
    let d = img.data();
    if d.is_empty() {
        return Err(QualityError::Empty);
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Mean and population standard deviation of HSV saturation
/// `S = (max − min) / max` (0 where max = 0).
pub fn saturation_stats(img: &ImageTensor) -> Result<(f64, f64), QualityError> {
    if img.channels() != 3 {
        return Err(QualityError::NotColor(img.channels()));
    }
    let px = img.to_unit();
    let n = (px.len() / 3) as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for p in px.chunks_exact(3) {
        let hi = p[0].max(p[1]).max(p[2]);
        let lo = p[0].min(p[1]).min(p[2]);
        let s = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        sum += s;
        sum_sq += s * s;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}
