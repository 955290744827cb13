//! Mining input/edited pairs from frame sequences: scene segmentation,
//! motion scoring and the similarity/motion keep-drop rule.

mod flow;
mod pairs;
mod scenes;

pub use flow::{motion_score, optical_flow, optical_flow_scaled, optical_flow_with, FlowConfig, FlowField};
pub use pairs::{
    candidate_pairs, score_pair, score_pair_with_embeddings, score_pairs, semantic_similarity, PairScore, PairScoringConfig,
    PairThresholds, PairVerdict,
};
pub use scenes::{detect_scenes, frame_histogram, histogram_distance, ClipBoundary, HIST_BINS};

use std::borrow::Cow;
use std::path::PathBuf;

use thiserror::Error;

use crate::image::{ImageError, ImageTensor};
use crate::providers::ProviderError;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("empty frame sequence")]
    Empty,
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    FrameDims {
        index: usize,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    Mismatch((usize, usize), (usize, usize)),
    #[error("image {height}x{width} is smaller than the {window}px flow window")]
    TooSmall { height: usize, width: usize, window: usize },
    #[error("vector length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// A frame held in memory or read on demand.
#[derive(Debug, Clone)]
pub enum Frame {
    Loaded(ImageTensor),
    Path(PathBuf),
}

impl Frame {
    pub fn image(&self) -> Result<Cow<'_, ImageTensor>, CurationError> {
        match self {
            Frame::Loaded(img) => Ok(Cow::Borrowed(img)),
            Frame::Path(p) => Ok(Cow::Owned(ImageTensor::load(p)?)),
        }
    }
}

/// Ordered frames of one video.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    timestamps: Option<Vec<f64>>,
}

impl FrameSequence {
    /// In-memory frames; all must share dimensions.
    pub fn from_images(images: Vec<ImageTensor>) -> Result<Self, CurationError> {
        let first = images.first().ok_or(CurationError::Empty)?.dims();
        if let Some((index, img)) = images.iter().enumerate().find(|(_, i)| i.dims() != first) {
            return Err(CurationError::FrameDims {
                index,
                expected: first,
                got: img.dims(),
            });
        }
        Ok(Self {
            frames: images.into_iter().map(Frame::Loaded).collect(),
            timestamps: None,
        })
    }

    /// Lazily loaded frames. Dimensions are checked when frames are decoded.
    pub fn from_paths(paths: Vec<PathBuf>) -> Result<Self, CurationError> {
        if paths.is_empty() {
            return Err(CurationError::Empty);
        }
        Ok(Self {
            frames: paths.into_iter().map(Frame::Path).collect(),
            timestamps: None,
        })
    }

    pub fn with_timestamps(mut self, ts: Vec<f64>) -> Self {
        assert_eq!(ts.len(), self.frames.len(), "one timestamp per frame");
        self.timestamps = Some(ts);
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }
}
