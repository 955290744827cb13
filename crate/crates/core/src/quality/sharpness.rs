use super::QualityError;
use crate::image::GrayImage;

/// Tenengrad focus measure: mean of `Gx² + Gy²` over interior pixels, with
/// `Gx`, `Gy` the 3×3 Sobel responses.
pub fn tenengrad(img: &GrayImage) -> Result<f64, QualityError> {
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(QualityError::TooSmall {
            height: h,
            width: w,
            min: 3,
        });
    }
    let d = img.data();
    let mut total = 0.0;
    for y in 1..h - 1 {
        let up = &d[(y - 1) * w..y * w];
        let mid = &d[y * w..(y + 1) * w];
        let dn = &d[(y + 1) * w..(y + 2) * w];
        let mut row = 0.0;
        for x in 1..w - 1 {
            let gx = (up[x + 1] + 2.0 * mid[x + 1] + dn[x + 1]) - (up[x - 1] + 2.0 * mid[x - 1] + dn[x - 1]);
            let gy = (dn[x - 1] + 2.0 * dn[x] + dn[x + 1]) - (up[x - 1] + 2.0 * up[x] + up[x + 1]);
            row += gx * gx + gy * gy;
        }
        total += row;
    }
    Ok(total / ((h - 2) * (w - 2)) as f64)
}
