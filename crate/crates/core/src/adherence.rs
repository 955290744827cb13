//! Instruction-following checks on an (input, edited) pair: where did the
//! image change, does the changed region match the instruction, and was the
//! rest left alone.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::{semantic_similarity, CurationError};
use crate::image::{ImageError, ImageTensor};
use crate::providers::{EmbeddingProvider, ProviderError};

#[derive(Debug, Error)]
pub enum AdherenceError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Mismatch((usize, usize), (usize, usize)),
    /// The mask is empty: nothing was edited. Distinct from low alignment.
    #[error("no edited region")]
    NoEdit,
    #[error("zero-norm or mismatched embedding: {0}")]
    Embedding(#[from] CurationError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Per-pixel edited-region flags, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl EditMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask buffer size");
        Self { height, width, data }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Inclusive-exclusive bounding box `(y0, x0, h, w)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    y0 = y0.min(y);
                    x0 = x0.min(x);
                    y1 = y1.max(y + 1);
                    x1 = x1.max(x + 1);
                }
            }
        }
        (y0 != usize::MAX).then(|| (y0, x0, y1 - y0, x1 - x0))
    }

    /// Load a 1-channel PNG; nonzero pixels are edited.
    pub fn load(path: &Path) -> Result<EditMask, ImageError> {
        let img = ImageTensor::load(path)?;
        let px = img.to_u8();
        let c = img.channels();
        let data = px.chunks_exact(c).map(|p| p.iter().any(|&v| v != 0)).collect();
        Ok(EditMask::new(img.height(), img.width(), data))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let px = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageTensor::from_u8(self.height, self.width, 1, px)?.save_png(path)
    }

    fn check_dims(&self, img: &ImageTensor) -> Result<(), AdherenceError> {
        if (self.height, self.width) != (img.height(), img.width()) {
            return Err(AdherenceError::Mismatch(
                (self.height, self.width),
                (img.height(), img.width()),
            ));
        }
        Ok(())
    }

    /// Square (Chebyshev) structuring element; outside pixels count as unset.
    fn dilate(&self, r: usize) -> EditMask {
        self.morph(r, false, |acc, v| acc || v)
    }

    /// Square structuring element; outside pixels count as set so the border
    /// does not erode.
    fn erode(&self, r: usize) -> EditMask {
        self.morph(r, true, |acc, v| acc && v)
    }

    fn morph(&self, r: usize, init: bool, op: impl Fn(bool, bool) -> bool) -> EditMask {
        let (h, w) = (self.height, self.width);
        let mut horiz = vec![init; h * w];
        for y in 0..h {
            for x in 0..w {
                let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                horiz[y * w + x] = (lo..=hi).fold(init, |a, xx| op(a, self.data[y * w + xx]));
            }
        }
        let mut out = vec![init; h * w];
        for y in 0..h {
            let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
            for x in 0..w {
                out[y * w + x] = (lo..=hi).fold(init, |a, yy| op(a, horiz[yy * w + x]));
            }
        }
        EditMask::new(h, w, out)
    }

    /// Morphological closing then opening.
    pub fn close_open(&self, radius: usize) -> EditMask {
        if radius == 0 {
            return self.clone();
        }
        self.dilate(radius).erode(radius).erode(radius).dilate(radius)
    }
}

/// How the preservation distance over the unedited region is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    /// Root mean square over unedited samples; resolution independent.
    #[default]
    Rms,
    /// Plain Euclidean norm of the difference over unedited samples.
    L2Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdherenceVerdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdherenceScore {
    pub edited_alignment: f64,
    pub unedited_distance: f64,
    pub verdict: AdherenceVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdherenceConfig {
    pub pixel_threshold: f64,
    pub morph_radius: usize,
    pub min_alignment: f64,
    pub max_distance: f64,
    pub distance_norm: DistanceNorm,
}

impl Default for AdherenceConfig {
    fn default() -> Self {
        Self {
            pixel_threshold: 0.06,
            morph_radius: 2,
            min_alignment: 0.20,
            max_distance: 0.05,
            distance_norm: DistanceNorm::Rms,
        }
    }
}

/// Mask of pixels whose largest per-channel absolute difference exceeds
/// `pixel_threshold`, cleaned by a closing then an opening of `morph_radius`.
pub fn diff_mask(
    input: &ImageTensor,
    edited: &ImageTensor,
    pixel_threshold: f64,
    morph_radius: usize,
) -> Result<EditMask, AdherenceError> {
    if input.dims() != edited.dims() {
        return Err(AdherenceError::Mismatch(
            (input.height(), input.width()),
            (edited.height(), edited.width()),
        ));
    }
    let c = input.channels();
    let (a, b) = (input.to_unit(), edited.to_unit());
    let data = a
        .chunks_exact(c)
        .zip(b.chunks_exact(c))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > pixel_threshold)
        .collect();
    Ok(EditMask::new(input.height(), input.width(), data).close_open(morph_radius))
}

/// Cosine between the instruction embedding and the embedding of the edited
/// image cropped to the mask's bounding box.
///
/// `crop_key` is forwarded to providers that read precomputed embeddings.
pub fn edited_region_alignment(
    edited: &ImageTensor,
    mask: &EditMask,
    instruction_embedding: &[f64],
    provider: &dyn EmbeddingProvider,
    crop_key: Option<&str>,
) -> Result<f64, AdherenceError> {
    mask.check_dims(edited)?;
    let (y0, x0, h, w) = mask.bounding_box().ok_or(AdherenceError::NoEdit)?;
    let crop = edited.crop(y0, x0, h, w)?;
    let e = provider.embed(&crop, crop_key)?;
    Ok(semantic_similarity(&e, instruction_embedding)?)
}

/// Distance between the two images over pixels outside the mask; 0 when the
/// mask covers everything.
pub fn unedited_region_distance(
    input: &ImageTensor,
    edited: &ImageTensor,
    mask: &EditMask,
    norm: DistanceNorm,
) -> Result<f64, AdherenceError> {
    if input.dims() != edited.dims() {
        return Err(AdherenceError::Mismatch(
            (input.height(), input.width()),
            (edited.height(), edited.width()),
        ));
    }
    mask.check_dims(input)?;
    let c = input.channels();
    let (a, b) = (input.to_unit(), edited.to_unit());
    let (mut sum_sq, mut n) = (0.0, 0usize);
    for ((p, q), &m) in a.chunks_exact(c).zip(b.chunks_exact(c)).zip(&mask.data) {
        if m {
            continue;
        }
        for (x, y) in p.iter().zip(q) {
            sum_sq += (x - y) * (x - y);
        }
        n += c;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(match norm {
        DistanceNorm::Rms => (sum_sq / n as f64).sqrt(),
        DistanceNorm::L2Sum => sum_sq.sqrt(),
    })
}

/// Keep iff alignment is high enough and the unedited region is preserved.
pub fn adherence_verdict(edited_alignment: f64, unedited_distance: f64, min_alignment: f64, max_distance: f64) -> AdherenceVerdict {
    if edited_alignment >= min_alignment && unedited_distance <= max_distance {
        AdherenceVerdict::Keep
    } else {
        AdherenceVerdict::Drop
    }
}

/// Full adherence scoring for one triplet.
pub fn score_adherence(
    input: &ImageTensor,
    edited: &ImageTensor,
    mask: &EditMask,
    instruction_embedding: &[f64],
    provider: &dyn EmbeddingProvider,
    crop_key: Option<&str>,
    cfg: &AdherenceConfig,
) -> Result<AdherenceScore, AdherenceError> {
    let edited_alignment = edited_region_alignment(edited, mask, instruction_embedding, provider, crop_key)?;
    let unedited_distance = unedited_region_distance(input, edited, mask, cfg.distance_norm)?;
    Ok(AdherenceScore {
        edited_alignment,
        unedited_distance,
        verdict: adherence_verdict(edited_alignment, unedited_distance, cfg.min_alignment, cfg.max_distance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{fallback_embedding, FallbackEmbedder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, 3, |_, _, _| 0.3 + 0.02 * rng.random::<f64>()).unwrap()
    }

    fn recolored_square(base: &ImageTensor, y0: usize, x0: usize, side: usize) -> ImageTensor {
        let (h, w, c) = base.dims();
        ImageTensor::from_fn(h, w, c, |y, x, ch| {
            let v = base.get(y, x, ch);
            if (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x) {
                if ch == 0 {
                    v + 0.4
                } else {
                    v
                }
            } else {
                v
            }
        })
        .unwrap()
    }

    #[test]
    fn identical_images_empty_mask() {
        let a = noise(1, 40, 40);
        assert!(diff_mask(&a, &a, 0.06, 2).unwrap().is_empty());
    }

    #[test]
    fn recolored_square_recovered_exactly() {
        let a = noise(2, 64, 64);
        let b = recolored_square(&a, 10, 20, 32);
        let m = diff_mask(&a, &b, 0.2, 1).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = (10..42).contains(&y) && (20..52).contains(&x);
                assert_eq!(m.get(y, x), inside, "({y},{x})");
            }
        }
        assert_eq!(m.bounding_box(), Some((10, 20, 32, 32)));
    }

    #[test]
    fn close_open_removes_speckle_and_fills_pinholes() {
        let mut data = vec![false; 20 * 20];
        data[3 * 20 + 3] = true; // isolated speck
        for y in 8..16 {
            for x in 8..16 {
                data[y * 20 + x] = true;
            }
        }
        data[11 * 20 + 11] = false; // pinhole
        let m = EditMask::new(20, 20, data).close_open(1);
        assert!(!m.get(3, 3));
        assert!(m.get(11, 11));
        assert_eq!(m.count(), 64);
    }

    #[test]
    fn external_mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = EditMask::new(3, 4, vec![true, false, false, true, false, true, true, false, false, false, false, true]);
        m.save_png(&p).unwrap();
        assert_eq!(EditMask::load(&p).unwrap(), m);
    }

    struct Fixed(Vec<f64>);
    impl EmbeddingProvider for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }
        fn embed(&self, _: &ImageTensor, _: Option<&str>) -> Result<Vec<f64>, ProviderError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn alignment_cases() {
        let img = noise(3, 16, 16);
        let mask = EditMask::full(16, 16);
        let instr = vec![0.3, -0.2, 0.9];
        let same = edited_region_alignment(&img, &mask, &instr, &Fixed(instr.clone()), None).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let orth = edited_region_alignment(&img, &mask, &[1.0, 0.0], &Fixed(vec![0.0, 1.0]), None).unwrap();
        assert_eq!(orth, 0.0);
        let empty = EditMask::empty(16, 16);
        assert!(matches!(
            edited_region_alignment(&img, &empty, &instr, &Fixed(instr.clone()), None),
            Err(AdherenceError::NoEdit)
        ));
    }

    #[test]
    fn fallback_self_embedding_aligns() {
        let a = noise(4, 64, 64);
        let textured = ImageTensor::from_fn(64, 64, 3, |y, x, c| {
            0.5 + 0.3 * ((y as f64 * 0.3).sin() * (x as f64 * 0.2 + c as f64).cos())
        })
        .unwrap();
        let b = ImageTensor::from_fn(64, 64, 3, |y, x, c| {
            if (8..40).contains(&y) && (16..48).contains(&x) {
                textured.get(y, x, c)
            } else {
                a.get(y, x, c)
            }
        })
        .unwrap();
        let m = diff_mask(&a, &b, 0.06, 1).unwrap();
        let (y0, x0, h, w) = m.bounding_box().unwrap();
        let instr = fallback_embedding(&b.crop(y0, x0, h, w).unwrap());
        let s = edited_region_alignment(&b, &m, &instr, &FallbackEmbedder, None).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn distance_cases() {
        let a = noise(5, 10, 10);
        let m = EditMask::empty(10, 10);
        assert_eq!(unedited_region_distance(&a, &a, &m, DistanceNorm::Rms).unwrap(), 0.0);
        let b = ImageTensor::from_fn(10, 10, 3, |y, x, c| a.get(y, x, c) + 0.1).unwrap();
        assert_eq!(unedited_region_distance(&a, &b, &EditMask::full(10, 10), DistanceNorm::Rms).unwrap(), 0.0);
        let mut half = EditMask::empty(10, 10);
        for x in 0..5 {
            for y in 0..10 {
                half.data[y * 10 + x] = true;
            }
        }
        let d = unedited_region_distance(&a, &b, &half, DistanceNorm::Rms).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        let l2 = unedited_region_distance(&a, &b, &half, DistanceNorm::L2Sum).unwrap();
        assert!((l2 - (150.0f64 * 0.01).sqrt()).abs() < 1e-12);
        let small = noise(5, 4, 4);
        assert!(matches!(
            unedited_region_distance(&a, &small, &m, DistanceNorm::Rms),
            Err(AdherenceError::Mismatch(..))
        ));
    }

    #[test]
    fn verdict_table() {
        assert_eq!(adherence_verdict(1.0, 0.0, 0.2, 0.05), AdherenceVerdict::Keep);
        assert_eq!(adherence_verdict(0.0, 0.0, 0.2, 0.05), AdherenceVerdict::Drop);
        assert_eq!(adherence_verdict(0.5, 0.3, 0.2, 0.1), AdherenceVerdict::Drop);
    }

    #[test]
    fn growing_mask_over_differences_removes_distance() {
        let a = noise(6, 32, 32);
        let b = recolored_square(&a, 4, 4, 8);
        let partial = EditMask::new(32, 32, (0..32 * 32).map(|i| (4..8).contains(&(i / 32)) && (4..12).contains(&(i % 32))).collect());
        let covering = diff_mask(&a, &b, 0.2, 0).unwrap();
        let d_partial = unedited_region_distance(&a, &b, &partial, DistanceNorm::Rms).unwrap();
        let d_cover = unedited_region_distance(&a, &b, &covering, DistanceNorm::Rms).unwrap();
        assert!(d_cover <= d_partial);
        assert_eq!(d_cover, 0.0);
    }

    #[test]
    fn diff_mask_is_stable() {
        let a = noise(7, 48, 48);
        let b = recolored_square(&a, 5, 9, 20);
        assert_eq!(diff_mask(&a, &b, 0.06, 2).unwrap(), diff_mask(&a, &b, 0.06, 2).unwrap());
    }

    proptest! {
        #[test]
        fn distance_to_self_is_zero(seed in any::<u64>(), bits in proptest::collection::vec(any::<bool>(), 64)) {
            let a = noise(seed, 8, 8);
            let m = EditMask::new(8, 8, bits);
            prop_assert_eq!(unedited_region_distance(&a, &a, &m, DistanceNorm::Rms).unwrap(), 0.0);
        }

        #[test]
        fn verdict_is_monotone(al in -1.0f64..1.0, d in 0.0f64..1.0, up in 0.0f64..1.0, down in 0.0f64..1.0,
                               min_al in -1.0f64..1.0, max_d in 0.0f64..1.0) {
            if adherence_verdict(al, d, min_al, max_d) == AdherenceVerdict::Keep {
                prop_assert_eq!(adherence_verdict(al + up, (d - down).max(0.0), min_al, max_d), AdherenceVerdict::Keep);
            }
        }
    }
}
