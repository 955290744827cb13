use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use uhr_core::curation::{candidate_pairs, detect_scenes, score_pairs, FrameSequence, PairScoringConfig};
use uhr_core::numerics::selftest;
use uhr_core::par::{self, Execution};
use uhr_core::pfid::{image_set_from_dir, pfid, PatchConfig, PatchSampling};
use uhr_core::pipeline::{
    load_manifest, run_pipeline, run_stage, write_atomic, write_manifest, PipelineConfig, PipelineError, Stage, TripletRecord,
};
use uhr_core::providers::{embedding_provider_from_spec, flow_provider_from_spec};
use uhr_core::quality::{assess_quality, QualityThresholds};

const EXIT_CONFIG: u8 = 2;
const EXIT_EMPTY: u8 = 3;

#[derive(Parser)]
#[command(name = "uhrkit", version, about = "Curation and evaluation tools for ultra-high-resolution editing data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a manifest of editing triplets.
    #[command(subcommand)]
    Curate(Curate),
    /// Patch-FID between a real and a generated image directory.
    Pfid(PfidArgs),
    /// Numerics kernels.
    #[command(subcommand)]
    Numerics(Numerics),
}

#[derive(Subcommand)]
enum Curate {
    /// Run every enabled stage in order.
    Run(RunArgs),
    /// Run one stage on its own.
    Stage {
        /// preliminary, quality, adherence or aesthetic
        name: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Mine candidate (input, edited) pairs from a directory of video frames.
    Pairs(PairsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON or TOML pipeline config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Worker threads (0 = all cores). Overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PairsArgs {
    /// Directory of frames, ordered by file name.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Histogram distance above which a new clip starts.
    #[arg(long, default_value_t = 0.5)]
    scene_threshold: f64,
    #[arg(long, default_value_t = 2)]
    min_clip_len: usize,
    /// Frame distance between the two members of a pair.
    #[arg(long, default_value_t = 1)]
    gap: usize,
    /// `builtin` or a directory of EMB1 files named by frame stem.
    #[arg(long, default_value = "builtin")]
    embeddings: String,
    /// `builtin` or a directory of FLO1 files named `<a>_<b>.flo`.
    #[arg(long, default_value = "builtin")]
    flow: String,
    /// When frames are checked against the default quality thresholds.
    #[arg(long, value_enum, default_value_t = QualityGate::Before)]
    quality: QualityGate,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum QualityGate {
    /// Skip scoring pairs that contain a failing frame.
    Before,
    /// Score every pair, then mark those with a failing frame.
    After,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Raster,
    Random,
}

#[derive(Args)]
struct PfidArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value_t = 512)]
    patch: usize,
    #[arg(long, default_value_t = 512)]
    stride: usize,
    #[arg(long, default_value_t = 64)]
    max_patches: usize,
    #[arg(long, value_enum, default_value_t = SamplingArg::Raster)]
    sampling: SamplingArg,
    /// `builtin` or a directory of EMB1 files named `<stem>_<y>_<x>.emb`.
    #[arg(long, default_value = "builtin")]
    features: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Numerics {
    /// Check every kernel invariant on seeded random instances.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn curate(stage: Option<Stage>, args: &RunArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(p) => match PipelineConfig::from_path(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
        },
        None => PipelineConfig::default(),
    };
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(EXIT_CONFIG));
    }
    let records = load_manifest(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();

    let kept: Vec<TripletRecord> = match stage {
        None => {
            let out = run_pipeline(records, &cfg, &base).map_err(anyhow::Error::from)?;
            if let Some(r) = &args.report {
                write_json(r, &out.report)?;
            }
            out.kept
        }
        Some(stage) => {
            let out = run_stage(stage, records, &cfg, &base)?;
            if let Some(r) = &args.report {
                write_json(
                    r,
                    &json!({
                        "config": cfg,
                        "stages": [out.report],
                        "notes": out.notes,
                        "drops": out.drops,
                    }),
                )?;
            }
            out.kept
        }
    };
    write_manifest(&args.out, &kept)?;
    eprintln!("{} records kept", kept.len());
    if kept.is_empty() {
        return Ok(ExitCode::from(EXIT_EMPTY));
    }
    Ok(ExitCode::SUCCESS)
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn pairs(args: &PairsArgs) -> Result<ExitCode> {
    let paths = frame_paths(&args.frames)?;
    let keys: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let seq = FrameSequence::from_paths(paths.clone())?;
    let cfg = PairScoringConfig::default();
    let emb = embedding_provider_from_spec(&args.embeddings);
    let flow = flow_provider_from_spec(&args.flow, cfg.flow.clone());
    let lines = par::with_workers(args.workers, || -> Result<Vec<String>> {
        let clips = detect_scenes(&seq, args.scene_threshold, args.min_clip_len, Execution::Parallel)?;
        let candidates = candidate_pairs(&clips, args.gap);
        let thresholds = QualityThresholds::default();
        let frame_ok: Vec<bool> = par::map_range(Execution::Parallel, seq.len(), |i| {
            args.quality == QualityGate::Off
                || seq.frames()[i]
                    .image()
                    .ok()
                    .and_then(|img| assess_quality(&img, &thresholds).ok())
                    .is_some_and(|v| v.passed)
        });
        let pair_ok = |&(i, j): &(usize, usize)| frame_ok[i] && frame_ok[j];
        let to_score: Vec<(usize, usize)> = match args.quality {
            QualityGate::Before => candidates.iter().copied().filter(pair_ok).collect(),
            _ => candidates.clone(),
        };
        let mut scores = score_pairs(&seq, &to_score, emb.as_ref(), flow.as_ref(), &cfg, Some(&keys), Execution::Parallel).into_iter();
        Ok(candidates
            .iter()
            .map(|&(i, j)| {
                let mut row = json!({
                    "frame_a": paths[i],
                    "frame_b": paths[j],
                    "index_a": i,
                    "index_b": j,
                });
                let scored = args.quality != QualityGate::Before || pair_ok(&(i, j));
                match scored.then(|| scores.next().expect("one score per scored pair")) {
                    Some(Ok(score)) => {
                        row["semantic_similarity"] = json!(score.semantic_similarity);
                        row["motion_score"] = json!(score.motion_score);
                        row["verdict"] = json!(score.verdict);
                    }
                    Some(Err(e)) => row["error"] = json!(e.to_string()),
                    None => {}
                }
                if !pair_ok(&(i, j)) {
                    row["verdict"] = json!("drop_quality");
                }
                row.to_string()
            })
            .collect())
    })?;
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_atomic(&args.out, text.as_bytes())?;
    eprintln!("{} candidate pairs", lines.len());
    Ok(ExitCode::SUCCESS)
}

fn run_pfid(args: &PfidArgs) -> Result<ExitCode> {
    let cfg = PatchConfig {
        patch_size: args.patch,
        stride: args.stride,
        max_patches_per_image: args.max_patches,
        sampling: match args.sampling {
            SamplingArg::Raster => PatchSampling::Raster,
            SamplingArg::Random => PatchSampling::Random,
        },
        seed: args.seed,
    };
    let real = image_set_from_dir(&args.real)?;
    let generated = image_set_from_dir(&args.gen)?;
    let provider = embedding_provider_from_spec(&args.features);
    let report = par::with_workers(args.workers, || pfid(&real, &generated, provider.as_ref(), &cfg, Execution::Parallel))?;
    println!("{}", report.score);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Curate(Curate::Run(args)) => curate(None, args),
        Command::Curate(Curate::Stage { name, run }) => match name.parse::<Stage>() {
            Ok(stage) => curate(Some(stage), run),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        Command::Curate(Curate::Pairs(args)) => pairs(args),
        Command::Pfid(args) => run_pfid(args),
        Command::Numerics(Numerics::Selftest { seed, json }) => {
            let report = selftest::run(*seed);
            if *json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for c in &report.checks {
                    println!("{} {:<26} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            return if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if let Some(PipelineError::Config(_)) = e.downcast_ref::<PipelineError>() {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_CONFIG);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
