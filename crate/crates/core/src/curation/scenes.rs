use serde::{Deserialize, Serialize};

use super::{CurationError, FrameSequence};
use crate::image::ImageTensor;
use crate::par::{self, Execution};

pub const HIST_BINS: usize = 32;

/// Half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipBoundary {
    pub start: usize,
    pub end: usize,
}

impl ClipBoundary {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Normalized per-channel histograms, `channels × HIST_BINS`.
pub fn frame_histogram(img: &ImageTensor) -> Vec<Vec<f64>> {
    let c = img.channels();
    let mut h = vec![vec![0.0; HIST_BINS]; c];
    let px = img.to_unit();
    for p in px.chunks_exact(c) {
        for (ch, &v) in p.iter().enumerate() {
            let bin = ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            h[ch][bin] += 1.0;
        }
    }
    let n = (px.len() / c) as f64;
    for ch in &mut h {
        ch.iter_mut().for_each(|v| *v /= n);
    }
    h
}

/// Mean over channels of the L1 distance between normalized histograms
/// (range `[0, 2]`).
pub fn histogram_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum();
    total / a.len() as f64
}

/// Split a sequence into clips wherever consecutive frames differ by more than
/// `threshold` in histogram distance, then fold clips shorter than
/// `min_clip_len` into their predecessor (the leading clip folds forward).
pub fn detect_scenes(
    seq: &FrameSequence,
    threshold: f64,
    min_clip_len: usize,
    mode: Execution,
) -> Result<Vec<ClipBoundary>, CurationError> {
    if seq.is_empty() {
        return Err(CurationError::Empty);
    }
    let hists = par::map(mode, seq.frames(), |f| {
        f.image().map(|img| (img.dims(), frame_histogram(&img)))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let expected = hists[0].0;
    if let Some((index, (got, _))) = hists.iter().enumerate().find(|(_, (d, _))| *d != expected) {
        return Err(CurationError::FrameDims {
            index,
            expected,
            got: *got,
        });
    }

    let mut cuts = vec![0];
    for i in 1..hists.len() {
        if histogram_distance(&hists[i - 1].1, &hists[i].1) > threshold {
            cuts.push(i);
        }
    }
    cuts.push(hists.len());
    let raw: Vec<ClipBoundary> = cuts
        .windows(2)
        .map(|w| ClipBoundary { start: w[0], end: w[1] })
        .collect();

    let mut clips: Vec<ClipBoundary> = Vec::with_capacity(raw.len());
    for clip in raw {
        match clips.last_mut() {
            Some(prev) if clip.len() < min_clip_len => prev.end = clip.end,
            _ => clips.push(clip),
        }
    }
    if clips.len() > 1 && clips[0].len() < min_clip_len {
        let first = clips.remove(0);
        clips[0].start = first.start;
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(v: f64) -> ImageTensor {
        ImageTensor::from_unit(4, 4, 3, vec![v; 48]).unwrap()
    }

    fn seq(values: &[f64]) -> FrameSequence {
        FrameSequence::from_images(values.iter().map(|&v| solid(v)).collect()).unwrap()
    }

    #[test]
    fn constant_sequence_is_one_clip() {
        let clips = detect_scenes(&seq(&[0.4; 10]), 0.5, 1, Execution::Sequential).unwrap();
        assert_eq!(clips, vec![ClipBoundary { start: 0, end: 10 }]);
    }

    #[test]
    fn hard_cut() {
        let mut v = vec![0.0; 5];
        v.extend([1.0; 5]);
        let s = seq(&v);
        let h0 = frame_histogram(&solid(0.0));
        let h1 = frame_histogram(&solid(1.0));
        assert_eq!(histogram_distance(&h0, &h1), 2.0);
        let clips = detect_scenes(&s, 1.9, 2, Execution::Parallel).unwrap();
        assert_eq!(
            clips,
            vec![ClipBoundary { start: 0, end: 5 }, ClipBoundary { start: 5, end: 10 }]
        );
    }

    #[test]
    fn slow_fade_stays_one_clip() {
        // Each step moves at most one bin's worth of mass: distance ≤ 2 but
        // only when crossing a bin edge; use a fade of small steps on a gradient.
        let frames: Vec<ImageTensor> = (0..20)
            .map(|t| ImageTensor::from_fn(16, 64, 1, |_, x, _| (x as f64 / 63.0) * 0.5 + t as f64 * 0.01).unwrap())
            .collect();
        let hists: Vec<_> = frames.iter().map(frame_histogram).collect();
        let max_step = hists
            .windows(2)
            .map(|w| histogram_distance(&w[0], &w[1]))
            .fold(0.0, f64::max);
        let threshold = max_step + 0.05;
        assert!(threshold < 2.0);
        let clips = detect_scenes(&FrameSequence::from_images(frames).unwrap(), threshold, 1, Execution::Sequential).unwrap();
        assert_eq!(clips.len(), 1);
    }

    #[test]
    fn short_clips_merge_backwards() {
        // cuts at 3 and 4: the 1-frame clip [3,4) joins [0,3)
        let clips = detect_scenes(&seq(&[0.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5]), 1.0, 2, Execution::Sequential).unwrap();
        assert_eq!(
            clips,
            vec![ClipBoundary { start: 0, end: 4 }, ClipBoundary { start: 4, end: 7 }]
        );
        // a short leading clip joins its successor
        let clips = detect_scenes(&seq(&[1.0, 0.0, 0.0, 0.0]), 1.0, 2, Execution::Sequential).unwrap();
        assert_eq!(clips, vec![ClipBoundary { start: 0, end: 4 }]);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let r = FrameSequence::from_images(vec![solid(0.0), ImageTensor::from_unit(2, 2, 3, vec![0.0; 12]).unwrap()]);
        assert!(matches!(r, Err(CurationError::FrameDims { index: 1, .. })));
        assert!(matches!(FrameSequence::from_images(vec![]), Err(CurationError::Empty)));
    }

    proptest! {
        #[test]
        fn clips_partition_the_sequence(values in proptest::collection::vec(0.0f64..=1.0, 1..40),
                                        threshold in 0.0f64..2.0, min_len in 1usize..6) {
            let s = seq(&values);
            let clips = detect_scenes(&s, threshold, min_len, Execution::Sequential).unwrap();
            prop_assert_eq!(clips[0].start, 0);
            prop_assert_eq!(clips.last().unwrap().end, values.len());
            for w in clips.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            for c in &clips {
                prop_assert!(c.start < c.end);
            }
            if clips.len() > 1 {
                prop_assert!(clips.iter().all(|c| c.len() >= min_len));
            }
        }
    }
}
