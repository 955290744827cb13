use serde::{Deserialize, Serialize};

use super::flow::{motion_score, FlowConfig};
use super::scenes::ClipBoundary;
use super::{CurationError, FrameSequence};
use crate::image::ImageTensor;
use crate::par::{self, Execution};
use crate::providers::{EmbeddingProvider, FlowProvider, SingleFlight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairVerdict {
    Keep,
    /// Near-duplicate frames: high similarity, almost no motion.
    DropSimilar,
    /// Large motion with little semantic correspondence.
    DropMisaligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairThresholds {
    pub sim_high: f64,
    pub sim_low: f64,
    /// Native pixels.
    pub motion_low: f64,
    /// Native pixels.
    pub motion_high: f64,
}

impl Default for PairThresholds {
    fn default() -> Self {
        Self {
            sim_high: 0.985,
            sim_low: 0.80,
            motion_low: 0.5,
            motion_high: 40.0,
        }
    }
}

impl PairThresholds {
    pub fn validate(&self) -> Result<(), CurationError> {
        if !(self.sim_low <= self.sim_high) || !(self.motion_low <= self.motion_high) {
            return Err(CurationError::Thresholds(format!("{self:?}: low cutoffs must not exceed high cutoffs")));
        }
        Ok(())
    }

    pub fn classify(&self, similarity: f64, motion: f64) -> PairVerdict {
        if similarity >= self.sim_high && motion <= self.motion_low {
            PairVerdict::DropSimilar
        } else if motion >= self.motion_high && similarity <= self.sim_low {
            PairVerdict::DropMisaligned
        } else {
            PairVerdict::Keep
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub semantic_similarity: f64,
    pub motion_score: f64,
    pub verdict: PairVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairScoringConfig {
    pub flow: FlowConfig,
    /// Average motion over a→b and b→a so the verdict is order-independent.
    pub bidirectional: bool,
    pub thresholds: PairThresholds,
}

impl Default for PairScoringConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            bidirectional: true,
            thresholds: PairThresholds::default(),
        }
    }
}

/// Cosine similarity.
pub fn semantic_similarity(ea: &[f64], eb: &[f64]) -> Result<f64, CurationError> {
    if ea.len() != eb.len() {
        return Err(CurationError::Length(ea.len(), eb.len()));
    }
    let dot: f64 = ea.iter().zip(eb).map(|(a, b)| a * b).sum();
    let na = ea.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = eb.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CurationError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Classify a pair from precomputed embeddings and motion.
pub fn score_pair_with_embeddings(
    ea: &[f64],
    eb: &[f64],
    motion: f64,
    thresholds: &PairThresholds,
) -> Result<PairScore, CurationError> {
    let semantic_similarity = semantic_similarity(ea, eb)?;
    Ok(PairScore {
        semantic_similarity,
        motion_score: motion,
        verdict: thresholds.classify(semantic_similarity, motion),
    })
}

/// Embed both frames, estimate motion and classify the pair.
///
/// `keys` are content digests forwarded to providers that read precomputed
/// results.
pub fn score_pair(
    a: &ImageTensor,
    b: &ImageTensor,
    embeddings: &dyn EmbeddingProvider,
    flow: &dyn FlowProvider,
    cfg: &PairScoringConfig,
    keys: (Option<&str>, Option<&str>),
) -> Result<PairScore, CurationError> {
    score_pair_gated(
        a,
        b,
        &SingleFlight::embedding(embeddings),
        &SingleFlight::flow_provider(flow),
        cfg,
        keys,
    )
}

fn score_pair_gated(
    a: &ImageTensor,
    b: &ImageTensor,
    embeddings: &SingleFlight<'_, dyn EmbeddingProvider + '_>,
    flow: &SingleFlight<'_, dyn FlowProvider + '_>,
    cfg: &PairScoringConfig,
    (ka, kb): (Option<&str>, Option<&str>),
) -> Result<PairScore, CurationError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(CurationError::Mismatch((a.height(), a.width()), (b.height(), b.width())));
    }
    let ea = embeddings.embed(a, ka)?;
    let eb = embeddings.embed(b, kb)?;
    let forward = motion_score(&flow.flow(a, b, ka, kb)?);
    let motion = if cfg.bidirectional {
        0.5 * (forward + motion_score(&flow.flow(b, a, kb, ka)?))
    } else {
        forward
    };
    score_pair_with_embeddings(&ea, &eb, motion, &cfg.thresholds)
}

/// Frame index pairs `(i, i + gap)` inside each clip, stepping by `gap`.
pub fn candidate_pairs(clips: &[ClipBoundary], gap: usize) -> Vec<(usize, usize)> {
    let gap = gap.max(1);
    clips
        .iter()
        .flat_map(|c| (c.start..c.end.saturating_sub(gap)).step_by(gap).map(move |i| (i, i + gap)))
        .collect()
}

/// Score many pairs of one sequence. Failures stay attached to their pair.
pub fn score_pairs(
    seq: &FrameSequence,
    pairs: &[(usize, usize)],
    embeddings: &dyn EmbeddingProvider,
    flow: &dyn FlowProvider,
    cfg: &PairScoringConfig,
    keys: Option<&[String]>,
    mode: Execution,
) -> Vec<Result<PairScore, CurationError>> {
    let emb = SingleFlight::embedding(embeddings);
    let fl = SingleFlight::flow_provider(flow);
    par::map(mode, pairs, |&(i, j)| {
        let a = seq.frames()[i].image()?;
        let b = seq.frames()[j].image()?;
        let key = |k: usize| keys.map(|ks| ks[k].as_str());
        score_pair_gated(&a, &b, &emb, &fl, cfg, (key(i), key(j)))
    })
}
