use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sqrec::dataset::{resolve, DatasetManifest, Split};
use sqrec::fit::{recover_scene, FitConfig};
use sqrec::metrics::{corrupt_instances, CorruptMode};
use sqrec::predictions::{self, area_confidence, ScenePrediction, SceneStatus};
use sqrec::sample::mix_seed;
use sqrec::{io, render, InstanceMaskImage, Scene, SceneBounds, View};

use crate::common::{with_jobs, write_run_config, RUN_CONFIG_FILE};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSource {
    /// Ground-truth instance ids.
    Oracle,
    /// Ground truth degraded by `--corrupt-mode` at `--corrupt-severity`.
    Corrupted,
    /// Masks read from `--masks-dir`.
    External,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoverArgs {
    /// Dataset manifest to recover.
    #[arg(long, conflicts_with_all = ["range", "masks"])]
    pub manifest: Option<PathBuf>,
    /// Only recover scenes of this split.
    #[arg(long, requires = "manifest")]
    pub split: Option<Split>,
    /// Single depth raster, recovered as scene 0.
    #[arg(long, requires = "masks")]
    pub range: Option<PathBuf>,
    /// Instance ids of `--range`.
    #[arg(long, requires = "range")]
    pub masks: Option<PathBuf>,
    /// Depth bound used when re-rendering a single raster.
    #[arg(long, default_value_t = 256)]
    pub depth: u32,
    #[arg(long, value_enum, default_value_t = MaskSource::Oracle)]
    pub mask_source: MaskSource,
    #[arg(long, default_value = "erode-border")]
    pub corrupt_mode: CorruptMode,
    #[arg(long, default_value_t = 0.0)]
    pub corrupt_severity: f64,
    /// Directory of `scene_NNNNNN.sqim` files (and optional `.json` scores).
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    /// Seeds mask corruption and point subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Prediction directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

struct Job {
    scene_id: u64,
    range: PathBuf,
    masks: PathBuf,
    bounds: SceneBounds,
}

#[derive(Debug, Serialize)]
struct Summary {
    source: MaskSource,
    scenes: usize,
    recovered: usize,
    skipped: usize,
    warnings: Vec<String>,
    instances_fitted: usize,
    instances_skipped: usize,
    mean_scene_seconds: f64,
    median_scene_seconds: f64,
    scene_ids: Vec<u64>,
}

fn jobs_from_args(args: &RecoverArgs) -> Result<Vec<Job>> {
    if let Some(mp) = &args.manifest {
        let m = DatasetManifest::load(mp).with_context(|| format!("loading {}", mp.display()))?;
        if m.view != View::TopDown {
            bail!("recovery needs top-down renders, manifest uses {:?}", m.view);
        }
        return Ok(m
            .scenes
            .iter()
            .filter(|r| args.split.is_none_or(|s| r.split == s))
            .map(|r| Job {
                scene_id: r.id,
                range: resolve(mp, &r.range_path),
                masks: resolve(mp, &r.mask_path),
                bounds: m.sampler_config.bounds,
            })
            .collect());
    }
    match (&args.range, &args.masks) {
        (Some(range), Some(masks)) => {
            if args.mask_source == MaskSource::External {
                bail!("--mask-source external needs --manifest; pass the masks with --masks instead");
            }
            let r = io::read_range(range)?;
            Ok(vec![Job {
                scene_id: 0,
                range: range.clone(),
                masks: masks.clone(),
                bounds: SceneBounds::new(r.width, r.height, args.depth)?,
            }])
        }
        _ => bail!("pass either --manifest or both --range and --masks"),
    }
}

fn validate(args: &RecoverArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.corrupt_severity) {
        bail!("--corrupt-severity {} outside [0, 1]", args.corrupt_severity);
    }
    if args.mask_source == MaskSource::External && args.masks_dir.is_none() {
        bail!("--mask-source external needs --masks-dir");
    }
    fit_config(args).validate()?;
    Ok(())
}

fn fit_config(args: &RecoverArgs) -> FitConfig {
    FitConfig {
        max_iterations: args.max_iters,
        cost_tolerance: args.tol,
        step_tolerance: args.tol,
        seed: args.seed,
        ..FitConfig::default()
    }
}

fn source_label(args: &RecoverArgs) -> String {
    match args.mask_source {
        MaskSource::Oracle => "oracle".into(),
        MaskSource::Corrupted => format!("corrupted:{}:{}", args.corrupt_mode, args.corrupt_severity),
        MaskSource::External => "external".into(),
    }
}

/// Masks and per-id scores for one scene, or `None` when external masks
/// are missing.
fn masks_for(args: &RecoverArgs, job: &Job) -> Result<Option<(InstanceMaskImage, Option<ScenePrediction>)>> {
    match args.mask_source {
        MaskSource::Oracle | MaskSource::Corrupted => {
            let truth = io::read_mask(&job.masks)?;
            let masks = if args.mask_source == MaskSource::Corrupted {
                corrupt_instances(&truth, args.corrupt_mode, args.corrupt_severity, mix_seed(args.seed, job.scene_id))?
            } else {
                truth
            };
            Ok(Some((masks, None)))
        }
        MaskSource::External => {
            let dir = args.masks_dir.as_deref().expect("validated");
            Ok(match predictions::load(dir, job.scene_id)? {
                Some((p, Some(m))) => Some((m, Some(p))),
                _ => None,
            })
        }
    }
}

fn recover_one(args: &RecoverArgs, job: &Job, cfg: &FitConfig, source: &str) -> Result<ScenePrediction> {
    let out = &args.out;
    let start = Instant::now();
    let Some((masks, scores)) = masks_for(args, job)? else {
        let warning = format!("scene {}: no masks in the external directory", job.scene_id);
        let pred = ScenePrediction::skipped(job.scene_id, source, warning);
        io::write_json(predictions::json_path(out, job.scene_id), &pred)?;
        return Ok(pred);
    };
    let range = io::read_range(&job.range)?;
    let recovered = recover_scene(&range, &masks, cfg)?;
    let confidence = |id: u16| {
        scores
            .as_ref()
            .and_then(|s| s.confidence(id))
            .unwrap_or_else(|| area_confidence(&masks, id))
    };
    let mut pred = predictions::from_recovery(job.scene_id, source, &recovered, confidence, 0.0);
    let recon_scene = Scene::new(pred.models(), job.bounds);
    let (recon, _) = render(&recon_scene)?;
    pred.wall_time = start.elapsed().as_secs_f64();

    io::write_mask(predictions::mask_path(out, job.scene_id), &masks)?;
    io::write_range(predictions::range_path(out, job.scene_id), &recon)?;
    io::write_json(predictions::json_path(out, job.scene_id), &pred)?;
    Ok(pred)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    sqrec::metrics::stats::quantile_sorted(&v, 0.5)
}

pub fn run(args: &RecoverArgs) -> Result<()> {
    validate(args)?;
    let jobs = jobs_from_args(args)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let cfg = fit_config(args);
    let source = source_label(args);

    let results = with_jobs(args.jobs, || {
        jobs.par_iter()
            .map(|job| {
                recover_one(args, job, &cfg, &source)
                    .with_context(|| format!("recovering scene {} from {}", job.scene_id, job.range.display()))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let warnings: Vec<String> = results.iter().filter_map(|p| p.warning.clone()).collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let times: Vec<f64> = results
        .iter()
        .filter(|p| p.status == SceneStatus::Recovered)
        .map(|p| p.wall_time)
        .collect();
    let fitted: usize = results.iter().map(|p| p.instances.iter().filter(|i| i.params.is_some()).count()).sum();
    let total: usize = results.iter().map(|p| p.instances.len()).sum();
    let summary = Summary {
        source: args.mask_source,
        scenes: results.len(),
        recovered: times.len(),
        skipped: results.len() - times.len(),
        warnings: warnings.clone(),
        instances_fitted: fitted,
        instances_skipped: total - fitted,
        mean_scene_seconds: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        median_scene_seconds: median(times.clone()),
        scene_ids: results.iter().map(|p| p.scene_id).collect(),
    };
    io::write_json(args.out.join(SUMMARY_FILE), &summary)?;
    write_run_config(&args.out.join(RUN_CONFIG_FILE), "recover", args)?;
    println!(
        "recovered {} of {} scenes ({} instances fitted, {} skipped), median {:.3} s per scene, {} warnings",
        summary.recovered,
        summary.scenes,
        summary.instances_fitted,
        summary.instances_skipped,
        summary.median_scene_seconds,
        warnings.len()
    );
    Ok(())
}
