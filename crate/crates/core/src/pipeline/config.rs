use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::adherence::{AdherenceConfig, DistanceNorm};
use crate::par::Execution;
use crate::quality::{QualityOptions, QualityThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DigestAlgorithm {
    #[default]
    Md5,
    Sha256,
}

impl DigestAlgorithm {
    pub fn hex(self, bytes: &[u8]) -> String {
        use md5::Digest as _;
        match self {
            DigestAlgorithm::Md5 => hex::encode(md5::Md5::digest(bytes)),
            DigestAlgorithm::Sha256 => hex::encode(sha2::Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub preliminary: bool,
    pub quality: bool,
    pub adherence: bool,
    pub aesthetic: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            preliminary: true,
            quality: true,
            adherence: true,
            aesthetic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreliminaryConfig {
    pub min_file_bytes: u64,
    pub max_aspect_ratio: f64,
}

impl Default for PreliminaryConfig {
    fn default() -> Self {
        Self {
            min_file_bytes: 32 * 1024,
            max_aspect_ratio: 2.5,
        }
    }
}

/// How the sharpness floor is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SharpnessRule {
    /// Drop images strictly below this percentile of the stage's Tenengrad
    /// values (never below the absolute `min_sharpness`).
    Percentile { percentile: f64 },
    /// Use `thresholds.min_sharpness` only.
    Absolute,
}

impl Default for SharpnessRule {
    fn default() -> Self {
        SharpnessRule::Percentile { percentile: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityStageConfig {
    pub thresholds: QualityThresholds,
    pub sharpness_rule: SharpnessRule,
    pub options: QualityOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdherenceStageConfig {
    pub pixel_threshold: f64,
    pub morph_radius: usize,
    pub min_alignment: f64,
    pub max_distance: f64,
    pub distance_norm: DistanceNorm,
    /// `builtin` or a directory of `EMB1` crop embeddings.
    pub crop_embeddings: String,
    /// Directory of `EMB1` instruction embeddings keyed by the digest of the
    /// instruction text. Without it the alignment check is skipped.
    pub instruction_embeddings: Option<PathBuf>,
}

impl Default for AdherenceStageConfig {
    fn default() -> Self {
        let a = AdherenceConfig::default();
        Self {
            pixel_threshold: a.pixel_threshold,
            morph_radius: a.morph_radius,
            min_alignment: a.min_alignment,
            max_distance: a.max_distance,
            distance_norm: a.distance_norm,
            crop_embeddings: "builtin".into(),
            instruction_embeddings: None,
        }
    }
}

impl AdherenceStageConfig {
    pub fn scoring(&self) -> AdherenceConfig {
        AdherenceConfig {
            pixel_threshold: self.pixel_threshold,
            morph_radius: self.morph_radius,
            min_alignment: self.min_alignment,
            max_distance: self.max_distance,
            distance_norm: self.distance_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    /// Rank by the aesthetic score alone.
    #[default]
    Aesthetic,
    /// Rank by the mean of the aesthetic score and the normalized adherence
    /// scores recorded by earlier stages.
    Composite,
}

/// A score read from the manifest's `scores` map and rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSource {
    pub key: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AestheticConfig {
    pub retention_fraction: f64,
    pub ranking: RankingMode,
    pub providers: Vec<ScoreSource>,
}

impl Default for AestheticConfig {
    fn default() -> Self {
        Self {
            retention_fraction: 0.2,
            ranking: RankingMode::Aesthetic,
            providers: vec![
                ScoreSource {
                    key: "aesthetic_laion".into(),
                    min: 0.0,
                    max: 10.0,
                },
                ScoreSource {
                    key: "aesthetic_artimuse".into(),
                    min: 0.0,
                    max: 100.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: StageToggles,
    pub digest: DigestAlgorithm,
    pub preliminary: PreliminaryConfig,
    pub quality: QualityStageConfig,
    pub adherence: AdherenceStageConfig,
    pub aesthetic: AestheticConfig,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub execution: Execution,
    pub seed: u64,
    /// Keep records whose provider lookups fail instead of dropping them.
    pub fail_open: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: StageToggles::default(),
            digest: DigestAlgorithm::Md5,
            preliminary: PreliminaryConfig::default(),
            quality: QualityStageConfig::default(),
            adherence: AdherenceStageConfig::default(),
            aesthetic: AestheticConfig::default(),
            workers: 0,
            execution: Execution::Parallel,
            seed: 0,
            fail_open: false,
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl PipelineConfig {
    /// Parse TOML (`.toml`) or JSON (anything else).
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let cfg: PipelineConfig = if is_toml {
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let f = self.aesthetic.retention_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(invalid(format!("retention_fraction must be in (0, 1], got {f}")));
        }
        if !(self.preliminary.max_aspect_ratio >= 1.0) {
            return Err(invalid("preliminary.max_aspect_ratio must be >= 1"));
        }
        self.quality.thresholds.validate().map_err(|e| invalid(e.to_string()))?;
        if let SharpnessRule::Percentile { percentile } = self.quality.sharpness_rule {
            if !(0.0..=100.0).contains(&percentile) {
                return Err(invalid(format!("sharpness percentile {percentile} outside [0, 100]")));
            }
        }
        if self.quality.options.glcm_levels < 2 || self.quality.options.glcm_offsets.is_empty() {
            return Err(invalid("glcm needs >= 2 levels and at least one offset"));
        }
        let a = &self.adherence;
        if !(a.pixel_threshold >= 0.0) || !(a.max_distance >= 0.0) || !(-1.0..=1.0).contains(&a.min_alignment) {
            return Err(invalid("adherence thresholds out of range"));
        }
        for p in &self.aesthetic.providers {
            if !(p.max > p.min) {
                return Err(invalid(format!("score source {} has max <= min", p.key)));
            }
        }
        Ok(())
    }
}
