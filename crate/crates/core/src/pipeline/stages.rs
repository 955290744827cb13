use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, RankingMode, SharpnessRule};
use super::manifest::{StageVerdict, TripletRecord};
use super::PipelineError;
use crate::adherence::{self, AdherenceVerdict, EditMask};
use crate::curation::semantic_similarity;
use crate::image::ImageTensor;
use crate::par;
use crate::providers::{embedding_provider_from_spec, Emb1Directory, EmbeddingProvider};
use crate::quality::{checks, judge, measure, names, QualityThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preliminary,
    Quality,
    Adherence,
    Aesthetic,
}

impl Stage {
    pub const ORDER: [Stage; 4] = [Stage::Preliminary, Stage::Quality, Stage::Adherence, Stage::Aesthetic];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preliminary => "preliminary",
            Stage::Quality => "quality",
            Stage::Adherence => "adherence",
            Stage::Aesthetic => "aesthetic",
        }
    }

    fn enabled(self, cfg: &PipelineConfig) -> bool {
        let t = &cfg.stages;
        match self {
            Stage::Preliminary => t.preliminary,
            Stage::Quality => t.quality,
            Stage::Adherence => t.adherence,
            Stage::Aesthetic => t.aesthetic,
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ORDER
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage \"{s}\" (expected preliminary, quality, adherence or aesthetic)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub input: usize,
    pub passed: usize,
    pub dropped: usize,
    pub reasons: BTreeMap<String, usize>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub stage: Stage,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub kept: Vec<TripletRecord>,
    pub drops: Vec<DropRecord>,
    pub report: StageReport,
    /// Stage-level facts worth surfacing in the run report.
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub input_records: usize,
    pub output_records: usize,
    pub stages: Vec<StageReport>,
    pub notes: BTreeMap<String, String>,
    pub drops: Vec<DropRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub kept: Vec<TripletRecord>,
    pub report: PipelineReport,
}

/// Why a record left a stage.
struct Rejection {
    reason: String,
    detail: Option<String>,
}

impl Rejection {
    fn new(reason: &str, detail: impl Into<Option<String>>) -> Self {
        Self {
            reason: reason.into(),
            detail: detail.into(),
        }
    }
}

type Decision = Result<TripletRecord, (TripletRecord, Rejection)>;

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    base_dir: &'a Path,
}

impl Ctx<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn load(&self, p: &Path) -> Result<ImageTensor, Rejection> {
        ImageTensor::load(&self.resolve(p)).map_err(|e| Rejection::new("unreadable", e.to_string()))
    }

    fn digest_file(&self, p: &Path) -> Result<String, Rejection> {
        let bytes = std::fs::read(self.resolve(p)).map_err(|e| Rejection::new("unreadable", e.to_string()))?;
        Ok(self.cfg.digest.hex(&bytes))
    }
}

fn finish(stage: Stage, decisions: Vec<Decision>, started: Instant, notes: BTreeMap<String, String>) -> StageOutcome {
    let input = decisions.len();
    let mut kept = Vec::new();
    let mut drops = Vec::new();
    let mut reasons = BTreeMap::new();
    for d in decisions {
        match d {
            Ok(mut r) => {
                r.stage_verdicts.insert(stage.name().into(), StageVerdict::Pass);
                kept.push(r);
            }
            Err((r, why)) => {
                *reasons.entry(why.reason.clone()).or_insert(0) += 1;
                drops.push(DropRecord {
                    id: r.id,
                    stage,
                    reason: why.reason,
                    detail: why.detail,
                });
            }
        }
    }
    let report = StageReport {
        stage,
        input,
        passed: kept.len(),
        dropped: drops.len(),
        reasons,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    StageOutcome {
        kept,
        drops,
        report,
        notes,
    }
}

// ---- preliminary -----------------------------------------------------------

fn check_file(ctx: &Ctx, p: &Path) -> Result<(String, u32, u32), Rejection> {
    let bytes = std::fs::read(ctx.resolve(p)).map_err(|e| Rejection::new("unreadable", e.to_string()))?;
    let pre = &ctx.cfg.preliminary;
    if (bytes.len() as u64) < pre.min_file_bytes {
        return Err(Rejection::new("too_small", format!("{} bytes", bytes.len())));
    }
    let img = image::load_from_memory(&bytes).map_err(|e| Rejection::new("unreadable", e.to_string()))?;
    let (w, h) = (img.width(), img.height());
    let ratio = w.max(h) as f64 / w.min(h).max(1) as f64;
    if ratio > pre.max_aspect_ratio {
        return Err(Rejection::new("aspect_ratio", format!("{w}x{h}")));
    }
    Ok((ctx.cfg.digest.hex(&bytes), w, h))
}

fn stage_preliminary(ctx: &Ctx, records: Vec<TripletRecord>) -> StageOutcome {
    let started = Instant::now();
    let checked = par::map(ctx.cfg.execution, &records, |r| {
        let a = check_file(ctx, &r.input_path)?;
        let b = check_file(ctx, &r.edited_path)?;
        Ok::<_, Rejection>((a, b))
    });
    // Duplicates are resolved in manifest order so the first occurrence wins.
    let mut seen = HashSet::new();
    let decisions = records
        .into_iter()
        .zip(checked)
        .map(|(mut r, c)| match c {
            Err(why) => Err((r, why)),
            Ok(((di, w, h), (de, _, _))) => {
                if !seen.insert((di.clone(), de.clone())) {
                    return Err((r, Rejection::new("duplicate", None)));
                }
                r.digest_input = Some(di);
                r.digest_edited = Some(de);
                r.width = Some(w);
                r.height = Some(h);
                Ok(r)
            }
        })
        .collect();
    finish(Stage::Preliminary, decisions, started, BTreeMap::new())
}

// ---- quality ---------------------------------------------------------------

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// When several checks fail, the one reported first.
const CHECK_PRIORITY: [&str; 5] = [
    checks::ASPECT_RATIO,
    checks::EXPOSURE,
    checks::SHARPNESS,
    checks::SATURATION,
    checks::TEXTURE,
];

type Measured = (BTreeMap<String, f64>, bool);

fn stage_quality(ctx: &Ctx, records: Vec<TripletRecord>) -> (StageOutcome, Option<f64>) {
    let started = Instant::now();
    let qc = &ctx.cfg.quality;
    let measured = par::map(ctx.cfg.execution, &records, |r| {
        let one = |p: &Path| -> Result<Measured, Rejection> {
            let img = ctx.load(p)?;
            let m = measure(&img, &qc.options).map_err(|e| Rejection::new("unmeasurable", e.to_string()))?;
            Ok((m, img.channels() == 3))
        };
        Ok::<_, Rejection>((one(&r.input_path)?, one(&r.edited_path)?))
    });

    let mut floor = qc.thresholds.min_sharpness;
    let mut computed = None;
    if let SharpnessRule::Percentile { percentile: p } = qc.sharpness_rule {
        let values: Vec<f64> = measured
            .iter()
            .flatten()
            .flat_map(|(a, b)| [&a.0, &b.0])
            .filter_map(|m| m.get(names::TENENGRAD).copied())
            .collect();
        if let Some(v) = percentile(&values, p) {
            computed = Some(v);
            floor = floor.max(v);
        }
    }
    let thresholds = QualityThresholds {
        min_sharpness: floor,
        ..qc.thresholds
    };

    let decisions = records
        .into_iter()
        .zip(measured)
        .map(|(mut r, m)| {
            let ((mi, ci), (me, ce)) = match m {
                Ok(v) => v,
                Err(why) => return Err((r, why)),
            };
            let vi = judge(mi, ci, &thresholds);
            let ve = judge(me, ce, &thresholds);
            for (prefix, v) in [("input", &vi), ("edited", &ve)] {
                for (k, x) in &v.measurements {
                    r.scores.insert(format!("{prefix}.{k}"), *x);
                }
            }
            if vi.passed && ve.passed {
                return Ok(r);
            }
            let failed: Vec<&str> = vi.failed_checks.iter().chain(&ve.failed_checks).map(String::as_str).collect();
            let primary = CHECK_PRIORITY.iter().find(|c| failed.contains(c)).copied().unwrap_or("quality");
            let detail = format!("input: {:?}, edited: {:?}", vi.failed_checks, ve.failed_checks);
            Err((r, Rejection::new(primary, detail)))
        })
        .collect();
    let mut notes = BTreeMap::new();
    notes.insert("quality.sharpness_floor".into(), format!("{floor:e}"));
    (finish(Stage::Quality, decisions, started, notes), computed)
}

// ---- adherence -------------------------------------------------------------

fn crop_key(digest: &str, mask: &EditMask) -> Option<String> {
    mask.bounding_box().map(|(y0, x0, h, w)| format!("{digest}_{x0}_{y0}_{w}_{h}"))
}

fn adherence_one(
    ctx: &Ctx,
    r: &mut TripletRecord,
    crop_provider: &dyn EmbeddingProvider,
    instructions: Option<&Emb1Directory>,
) -> Result<(), Rejection> {
    let ac = &ctx.cfg.adherence;
    let scoring = ac.scoring();
    let input = ctx.load(&r.input_path)?;
    let edited = ctx.load(&r.edited_path)?;
    if input.dims() != edited.dims() {
        return Err(Rejection::new(
            "dimension_mismatch",
            format!("{:?} vs {:?}", input.dims(), edited.dims()),
        ));
    }
    let mask = match &r.mask_path {
        Some(p) => {
            let m = EditMask::load(&ctx.resolve(p)).map_err(|e| Rejection::new("mask_unreadable", e.to_string()))?;
            if (m.height, m.width) != (input.height(), input.width()) {
                return Err(Rejection::new("mask_unreadable", "mask size differs from image".to_string()));
            }
            m
        }
        None => adherence::diff_mask(&input, &edited, scoring.pixel_threshold, scoring.morph_radius)
            .map_err(|e| Rejection::new("dimension_mismatch", e.to_string()))?,
    };
    if mask.is_empty() {
        return Err(Rejection::new("no-edit", None));
    }
    let distance = adherence::unedited_region_distance(&input, &edited, &mask, scoring.distance_norm)
        .map_err(|e| Rejection::new("dimension_mismatch", e.to_string()))?;
    r.scores.insert("adherence.distance".into(), distance);
    r.scores.insert("adherence.mask_pixels".into(), mask.count() as f64);

    let alignment = match instructions {
        None => None,
        Some(dir) => {
            let key = ctx.cfg.digest.hex(r.instruction.as_bytes());
            let scored = (|| {
                let instr = dir.lookup(&key).map_err(|e| e.to_string())?;
                let digest = match &r.digest_edited {
                    Some(d) => d.clone(),
                    None => ctx.digest_file(&r.edited_path).map_err(|e| e.detail.unwrap_or(e.reason))?,
                };
                let ck = crop_key(&digest, &mask);
                let (y0, x0, h, w) = mask.bounding_box().expect("mask is nonempty");
                let crop = edited.crop(y0, x0, h, w).map_err(|e| e.to_string())?;
                let emb = crop_provider.embed(&crop, ck.as_deref()).map_err(|e| e.to_string())?;
                semantic_similarity(&emb, &instr).map_err(|e| e.to_string())
            })();
            match scored {
                Ok(a) => Some(a),
                Err(e) if ctx.cfg.fail_open => {
                    r.extra.insert("adherence_provider_error".into(), e.into());
                    None
                }
                Err(e) => return Err(Rejection::new("provider_error", e)),
            }
        }
    };
    if let Some(a) = alignment {
        r.scores.insert("adherence.alignment".into(), a);
    }
    // Without an alignment score only preservation decides.
    let effective = alignment.unwrap_or(f64::INFINITY);
    match adherence::adherence_verdict(effective, distance, scoring.min_alignment, scoring.max_distance) {
        AdherenceVerdict::Keep => Ok(()),
        AdherenceVerdict::Drop if effective < scoring.min_alignment => {
            Err(Rejection::new("low_alignment", format!("{effective:.4}")))
        }
        AdherenceVerdict::Drop => Err(Rejection::new("poor_preservation", format!("{distance:.4}"))),
    }
}

fn stage_adherence(ctx: &Ctx, records: Vec<TripletRecord>) -> StageOutcome {
    let started = Instant::now();
    let ac = &ctx.cfg.adherence;
    let crop_provider = embedding_provider_from_spec(&ac.crop_embeddings);
    let instructions = ac.instruction_embeddings.as_ref().map(Emb1Directory::new);
    let decisions = par::map(ctx.cfg.execution, &records, |r| {
        let mut r = r.clone();
        match adherence_one(ctx, &mut r, crop_provider.as_ref(), instructions.as_ref()) {
            Ok(()) => Ok(r),
            Err(why) => Err((r, why)),
        }
    });
    let mut notes = BTreeMap::new();
    notes.insert(
        "adherence.alignment".into(),
        match &instructions {
            Some(_) => format!("crop vs instruction embedding ({})", crop_provider.id()),
            None => "skipped (no instruction embeddings configured)".into(),
        },
    );
    finish(Stage::Adherence, decisions, started, notes)
}

// ---- aesthetic -------------------------------------------------------------

fn provider_score(cfg: &PipelineConfig, r: &TripletRecord) -> Option<f64> {
    let vals: Vec<f64> = cfg
        .aesthetic
        .providers
        .iter()
        .filter_map(|p| r.scores.get(&p.key).map(|v| ((v - p.min) / (p.max - p.min)).clamp(0.0, 1.0)))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Sharpness, texture entropy and exposure centering of the edited image.
fn fallback_inputs(ctx: &Ctx, r: &TripletRecord) -> Result<[f64; 3], Rejection> {
    let key = |n: &str| format!("edited.{n}");
    let cached = [names::TENENGRAD, names::GLCM_ENTROPY, names::MEAN_LUMINANCE].map(|n| r.scores.get(&key(n)).copied());
    if let [Some(a), Some(b), Some(c)] = cached {
        return Ok([a, b, c]);
    }
    let img = ctx.load(&r.edited_path)?;
    let m = measure(&img, &ctx.cfg.quality.options).map_err(|e| Rejection::new("unmeasurable", e.to_string()))?;
    Ok([m[names::TENENGRAD], m[names::GLCM_ENTROPY], m[names::MEAN_LUMINANCE]])
}

fn stage_aesthetic(ctx: &Ctx, records: Vec<TripletRecord>) -> StageOutcome {
    let started = Instant::now();
    let cfg = ctx.cfg;
    let mut notes = BTreeMap::new();
    let use_providers = !records.is_empty() && records.iter().all(|r| provider_score(cfg, r).is_some());

    let scores: Vec<Result<f64, Rejection>> = if use_providers {
        notes.insert("aesthetic.source".into(), "providers".into());
        records.iter().map(|r| Ok(provider_score(cfg, r).expect("checked above"))).collect()
    } else {
        notes.insert("aesthetic.source".into(), "fallback_composite".into());
        let raw = par::map(cfg.execution, &records, |r| fallback_inputs(ctx, r));
        let sharp: Vec<f64> = raw.iter().flatten().map(|v| v[0].ln_1p()).collect();
        let (lo, hi) = sharp.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let levels = cfg.quality.options.glcm_levels as f64;
        let max_entropy = (levels * levels).ln();
        raw.into_iter()
            .map(|v| {
                let [t, ent, lum] = v?;
                let s = if hi > lo { (t.ln_1p() - lo) / (hi - lo) } else { 0.5 };
                let e = (ent / max_entropy).clamp(0.0, 1.0);
                let x = 1.0 - 2.0 * (lum - 0.5).abs();
                Ok(0.4 * s + 0.3 * e + 0.3 * x)
            })
            .collect()
    };

    let mut decisions: Vec<Option<Decision>> = Vec::with_capacity(records.len());
    let mut ranked: Vec<(f64, String, usize)> = Vec::new();
    let mut pending: Vec<Option<TripletRecord>> = Vec::new();
    for (i, (mut r, s)) in records.into_iter().zip(scores).enumerate() {
        match s {
            Err(why) if !cfg.fail_open => {
                decisions.push(Some(Err((r, why))));
                pending.push(None);
            }
            s => {
                let a = s.unwrap_or(0.0);
                r.scores.insert("aesthetic.score".into(), a);
                let rank = match cfg.aesthetic.ranking {
                    RankingMode::Aesthetic => a,
                    RankingMode::Composite => {
                        let mut parts = vec![a];
                        if let Some(al) = r.scores.get("adherence.alignment") {
                            parts.push((al + 1.0) / 2.0);
                        }
                        if let (Some(d), true) = (r.scores.get("adherence.distance"), cfg.adherence.max_distance > 0.0) {
                            parts.push(1.0 - (d / cfg.adherence.max_distance).min(1.0));
                        }
                        parts.iter().sum::<f64>() / parts.len() as f64
                    }
                };
                r.scores.insert("aesthetic.rank_score".into(), rank);
                ranked.push((rank, r.id.clone(), i));
                decisions.push(None);
                pending.push(Some(r));
            }
        }
    }
    let keep_n = ((cfg.aesthetic.retention_fraction * ranked.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let keep: HashSet<usize> = ranked.iter().take(keep_n).map(|t| t.2).collect();
    let decisions = decisions
        .into_iter()
        .zip(pending)
        .enumerate()
        .map(|(i, (d, p))| match (d, p) {
            (Some(d), _) => d,
            (None, Some(r)) if keep.contains(&i) => Ok(r),
            (None, Some(r)) => Err((r, Rejection::new("below_retention", None))),
            (None, None) => unreachable!("each record has a decision or is pending"),
        })
        .collect();
    finish(Stage::Aesthetic, decisions, started, notes)
}

// ---- driver ----------------------------------------------------------------

fn dispatch(ctx: &Ctx, stage: Stage, records: Vec<TripletRecord>) -> StageOutcome {
    match stage {
        Stage::Preliminary => stage_preliminary(ctx, records),
        Stage::Quality => stage_quality(ctx, records).0,
        Stage::Adherence => stage_adherence(ctx, records),
        Stage::Aesthetic => stage_aesthetic(ctx, records),
    }
}

/// Run a single stage regardless of the config's stage toggles. Relative
/// paths are resolved against `base_dir`.
pub fn run_stage(
    stage: Stage,
    records: Vec<TripletRecord>,
    cfg: &PipelineConfig,
    base_dir: &Path,
) -> Result<StageOutcome, PipelineError> {
    cfg.validate()?;
    let ctx = Ctx { cfg, base_dir };
    Ok(par::with_workers(cfg.workers, || dispatch(&ctx, stage, records)))
}

/// Run every enabled stage in order; each stage sees only the previous
/// stage's survivors.
pub fn run_pipeline(records: Vec<TripletRecord>, cfg: &PipelineConfig, base_dir: &Path) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let ctx = Ctx { cfg, base_dir };
    let input_records = records.len();
    let (kept, stages, notes, drops) = par::with_workers(cfg.workers, || {
        let mut current = records;
        let mut stages = Vec::new();
        let mut notes = BTreeMap::new();
        let mut drops = Vec::new();
        for stage in Stage::ORDER.into_iter().filter(|s| s.enabled(cfg)) {
            let out = dispatch(&ctx, stage, current);
            log::info!(
                "{}: {} in, {} kept, {} dropped",
                stage.name(),
                out.report.input,
                out.report.passed,
                out.report.dropped
            );
            current = out.kept;
            stages.push(out.report);
            notes.extend(out.notes);
            drops.extend(out.drops);
        }
        (current, stages, notes, drops)
    });
    Ok(PipelineOutcome {
        report: PipelineReport {
            config: cfg.clone(),
            input_records,
            output_records: kept.len(),
            stages,
            notes,
            drops,
        },
        kept,
    })
}
