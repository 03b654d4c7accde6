use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use sqrec::dataset::{resolve, scene_stem, DatasetManifest, SceneRecord, Split};
use sqrec::metrics::{
    box_stats, coco_thresholds, mask_iou, mask_map, reconstruction_mae, reference, BinaryMask, BoxStats,
    ParamErrorReport, ParamPair, ScoredMask, SegEvalReport, SegSample,
};
use sqrec::predictions::{self, ScenePrediction, SceneStatus};
use sqrec::{io, render, Scene, Superquadric};

use crate::common::{write_run_config, RUN_CONFIG_FILE};

pub const REPORT_FILE: &str = "report.json";
pub const INSTANCES_CSV: &str = "instances.csv";
pub const SCENES_CSV: &str = "scenes.csv";

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Ground-truth dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of per-scene predictions, as written by `recover` or an
    /// external segmenter.
    #[arg(long)]
    pub recovery: PathBuf,
    /// Score every scene of this split; scenes without predictions count
    /// as skipped. By default only scenes with prediction files are scored.
    #[arg(long)]
    pub split: Option<Split>,
    /// Lowest mask IoU at which a prediction is paired with a truth for
    /// parameter errors.
    #[arg(long, default_value_t = 0.5)]
    pub match_iou: f64,
    /// Report directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ReconstructionSummary {
    mean_mae: f64,
    by_count: BTreeMap<usize, f64>,
    distribution: Option<BoxStats>,
}

#[derive(Debug, Serialize)]
struct PublishedReference {
    param_mae_all: [f64; 8],
    map: [f64; 3],
    reconstruction_mae_cnn: f64,
    reconstruction_mae_iterative: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    param_order: [&'static str; 8],
    scenes_evaluated: usize,
    scenes_skipped: Vec<u64>,
    instances_matched: usize,
    truths_unmatched: usize,
    predictions_unmatched: usize,
    parameters: Option<ParamErrorReport>,
    segmentation: SegEvalReport,
    reconstruction: ReconstructionSummary,
    scene_seconds: Option<BoxStats>,
    reference: PublishedReference,
}

struct InstanceRow {
    scene_id: u64,
    scene_count: usize,
    truth_id: Option<u16>,
    pred_id: Option<u16>,
    iou: f64,
    confidence: Option<f64>,
    pred: Option<[f64; 8]>,
    truth: Option<[f64; 8]>,
}

struct SceneRow {
    scene_id: u64,
    split: Split,
    scene_count: usize,
    status: &'static str,
    reconstruction_mae: Option<f64>,
    truths: usize,
    predictions: usize,
    matched: usize,
    wall_time: f64,
}

struct SceneEval {
    sample: SegSample,
    pairs: Vec<ParamPair>,
    rows: Vec<InstanceRow>,
    mae: f64,
    matched: usize,
    unmatched_preds: usize,
}

/// Greedy one-to-one pairing by descending IoU, keeping pairs at or above
/// `min_iou`. Returns `(pred index, truth index, iou)`.
pub fn match_by_iou(ious: &[Vec<f64>], min_iou: f64) -> Vec<(usize, usize, f64)> {
    let mut all: Vec<(usize, usize, f64)> = ious
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(t, &v)| (p, t, v)))
        .filter(|&(_, _, v)| v >= min_iou && v > 0.0)
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let n_truth = ious.first().map_or(0, |r| r.len());
    let (mut pu, mut tu) = (vec![false; ious.len()], vec![false; n_truth]);
    let mut out = Vec::new();
    for (p, t, v) in all {
        if !pu[p] && !tu[t] {
            pu[p] = true;
            tu[t] = true;
            out.push((p, t, v));
        }
    }
    out
}

fn evaluate_scene(
    manifest_path: &Path,
    manifest: &DatasetManifest,
    record: &SceneRecord,
    pred: &ScenePrediction,
    pred_masks: &sqrec::InstanceMaskImage,
    recon_path: &Path,
    min_iou: f64,
) -> Result<SceneEval> {
    let truth_masks = io::read_mask(resolve(manifest_path, &record.mask_path))?;
    let truth_range = io::read_range(resolve(manifest_path, &record.range_path))?;
    let truth_models = record.models();
    let count = truth_models.len();

    let truth_ids = truth_masks.present_ids();
    let truth_bin: Vec<BinaryMask> = truth_ids.iter().map(|&id| BinaryMask::from_ids(&truth_masks, id)).collect();
    let pred_ids = pred_masks.present_ids();
    let pred_bin: Vec<BinaryMask> = pred_ids.iter().map(|&id| BinaryMask::from_ids(pred_masks, id)).collect();
    let confidence = |id: u16| pred.confidence(id).unwrap_or_else(|| predictions::area_confidence(pred_masks, id));

    let ious = pred_bin
        .iter()
        .map(|p| truth_bin.iter().map(|t| mask_iou(p, t)).collect::<sqrec::Result<Vec<_>>>())
        .collect::<sqrec::Result<Vec<_>>>()?;
    let matches = match_by_iou(&ious, min_iou);

    let params_of = |id: u16| pred.instances.iter().find(|i| i.id == id).and_then(|i| i.params);
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    let mut truth_seen = vec![false; truth_ids.len()];
    for &(p, t, iou) in &matches {
        truth_seen[t] = true;
        let (pid, tid) = (pred_ids[p], truth_ids[t]);
        let truth = truth_models.get(tid as usize - 1).copied();
        let pp = params_of(pid);
        if let (Some(pa), Some(tr)) = (pp, truth) {
            pairs.push(ParamPair { pred: Superquadric::from_array(pa), truth: tr, scene_count: count });
        }
        rows.push(InstanceRow {
            scene_id: record.id,
            scene_count: count,
            truth_id: Some(tid),
            pred_id: Some(pid),
            iou,
            confidence: Some(confidence(pid)),
            pred: pp,
            truth: truth.map(|s| s.to_array()),
        });
    }
    for (t, seen) in truth_seen.iter().enumerate() {
        if !seen {
            let tid = truth_ids[t];
            rows.push(InstanceRow {
                scene_id: record.id,
                scene_count: count,
                truth_id: Some(tid),
                pred_id: None,
                iou: 0.0,
                confidence: None,
                pred: None,
                truth: truth_models.get(tid as usize - 1).map(|s| s.to_array()),
            });
        }
    }

    let recon = if recon_path.exists() {
        io::read_range(recon_path)?
    } else {
        let scene = Scene::new(pred.models(), manifest.sampler_config.bounds);
        render(&scene)?.0
    };
    let mae = reconstruction_mae(&truth_range, &recon)?;

    let sample = SegSample {
        predictions: pred_ids
            .iter()
            .zip(pred_bin)
            .map(|(&id, mask)| ScoredMask { mask, score: confidence(id) })
            .collect(),
        truths: truth_bin,
        scene_count: count,
    };
    Ok(SceneEval {
        sample,
        pairs,
        rows,
        mae,
        matched: matches.len(),
        unmatched_preds: pred_ids.len() - matches.len(),
    })
}

/// Scene ids of every prediction file in `dir`.
fn prediction_ids(dir: &Path) -> Result<BTreeSet<u64>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        let Some(rest) = name.strip_prefix("scene_") else { continue };
        let Some(num) = rest.strip_suffix(".json").or_else(|| rest.strip_suffix(".sqim")) else { continue };
        if let Ok(id) = num.parse::<u64>() {
            ids.insert(id);
        }
    }
    Ok(ids)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn instances_csv(rows: &[InstanceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["scene_id", "scene_count", "truth_id", "pred_id", "mask_iou", "confidence"]
        .map(String::from)
        .to_vec();
    for n in Superquadric::PARAM_NAMES {
        header.push(format!("{n}_pred"));
        header.push(format!("{n}_truth"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.scene_id.to_string(),
            r.scene_count.to_string(),
            r.truth_id.map(|v| v.to_string()).unwrap_or_default(),
            r.pred_id.map(|v| v.to_string()).unwrap_or_default(),
            r.iou.to_string(),
            fmt_opt(r.confidence),
        ];
        for k in 0..8 {
            rec.push(fmt_opt(r.pred.map(|p| p[k])));
            rec.push(fmt_opt(r.truth.map(|p| p[k])));
        }
        w.write_record(&rec)?;
    }
    Ok(w.into_inner()?)
}

fn scenes_csv(rows: &[SceneRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scene_id",
        "split",
        "scene_count",
        "status",
        "reconstruction_mae",
        "truths",
        "predictions",
        "matched",
        "wall_time",
    ])?;
    for r in rows {
        w.write_record([
            r.scene_id.to_string(),
            r.split.to_string(),
            r.scene_count.to_string(),
            r.status.to_string(),
            fmt_opt(r.reconstruction_mae),
            r.truths.to_string(),
            r.predictions.to_string(),
            r.matched.to_string(),
            r.wall_time.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.match_iou) {
        bail!("--match-iou {} outside [0, 1]", args.match_iou);
    }
    let manifest = DatasetManifest::load(&args.manifest).with_context(|| format!("loading {}", args.manifest.display()))?;
    let known: BTreeSet<u64> = manifest.scenes.iter().map(|s| s.id).collect();
    let present = prediction_ids(&args.recovery)?;
    let stray: Vec<u64> = present.difference(&known).copied().collect();
    if !stray.is_empty() {
        bail!("predictions for scene ids not in the manifest: {stray:?}");
    }

    let mut samples = Vec::new();
    let mut pairs = Vec::new();
    let mut inst_rows = Vec::new();
    let mut scene_rows = Vec::new();
    let mut maes: Vec<(usize, f64)> = Vec::new();
    let mut skipped = Vec::new();
    let mut times = Vec::new();
    let (mut matched, mut unmatched_preds) = (0, 0);

    // With a split, every scene of it is expected; otherwise only the
    // scenes the prediction directory mentions.
    let wanted = |r: &&SceneRecord| match args.split {
        Some(s) => r.split == s,
        None => present.contains(&r.id),
    };
    for record in manifest.scenes.iter().filter(wanted) {
        let loaded = predictions::load(&args.recovery, record.id)
            .with_context(|| format!("loading predictions for {}", scene_stem(record.id)))?;
        let count = record.superquadrics.len();
        let usable = match loaded {
            Some((p, Some(m))) if p.status == SceneStatus::Recovered => {
                if p.scene_id != record.id {
                    bail!("{} describes scene {}", scene_stem(record.id), p.scene_id);
                }
                Some((p, m))
            }
            _ => None,
        };
        let Some((pred, pred_masks)) = usable else {
            skipped.push(record.id);
            scene_rows.push(SceneRow {
                scene_id: record.id,
                split: record.split,
                scene_count: count,
                status: "skipped",
                reconstruction_mae: None,
                truths: count,
                predictions: 0,
                matched: 0,
                wall_time: 0.0,
            });
            continue;
        };
        let recon_path = predictions::range_path(&args.recovery, record.id);
        let ev = evaluate_scene(&args.manifest, &manifest, record, &pred, &pred_masks, &recon_path, args.match_iou)
            .with_context(|| format!("evaluating {}", scene_stem(record.id)))?;
        scene_rows.push(SceneRow {
            scene_id: record.id,
            split: record.split,
            scene_count: count,
            status: "evaluated",
            reconstruction_mae: Some(ev.mae),
            truths: ev.sample.truths.len(),
            predictions: ev.sample.predictions.len(),
            matched: ev.matched,
            wall_time: pred.wall_time,
        });
        matched += ev.matched;
        unmatched_preds += ev.unmatched_preds;
        maes.push((count, ev.mae));
        times.push(pred.wall_time);
        pairs.extend(ev.pairs);
        inst_rows.extend(ev.rows);
        samples.push(ev.sample);
    }

    if samples.is_empty() {
        bail!("no scene of {} has usable predictions in {}", args.manifest.display(), args.recovery.display());
    }

    let truths_total: usize = samples.iter().map(|s| s.truths.len()).sum();
    let segmentation = mask_map(&samples, &coco_thresholds())?;
    let parameters = if pairs.is_empty() { None } else { Some(ParamErrorReport::from_pairs(&pairs)?) };
    let mut by_count: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(c, m) in &maes {
        by_count.entry(c).or_default().push(m);
    }
    let all_maes: Vec<f64> = maes.iter().map(|m| m.1).collect();
    let reconstruction = ReconstructionSummary {
        mean_mae: all_maes.iter().sum::<f64>() / all_maes.len() as f64,
        by_count: by_count.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect(),
        distribution: box_stats(&all_maes),
    };
    let report = Report {
        param_order: Superquadric::PARAM_NAMES,
        scenes_evaluated: samples.len(),
        scenes_skipped: skipped,
        instances_matched: matched,
        truths_unmatched: truths_total - matched,
        predictions_unmatched: unmatched_preds,
        parameters,
        segmentation,
        reconstruction,
        scene_seconds: box_stats(&times),
        reference: PublishedReference {
            param_mae_all: reference::CNN_PARAM_MAE_ALL,
            map: reference::MASK_RCNN_MAP,
            reconstruction_mae_cnn: reference::CNN_RECONSTRUCTION_MAE,
            reconstruction_mae_iterative: reference::ITERATIVE_RECONSTRUCTION_MAE,
        },
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    io::write_json(args.out.join(REPORT_FILE), &report)?;
    io::write_atomic(args.out.join(INSTANCES_CSV), &instances_csv(&inst_rows)?)?;
    io::write_atomic(args.out.join(SCENES_CSV), &scenes_csv(&scene_rows)?)?;
    write_run_config(&args.out.join(RUN_CONFIG_FILE), "evaluate", args)?;

    println!(
        "scenes evaluated: {} (skipped {})",
        report.scenes_evaluated,
        report.scenes_skipped.len()
    );
    if let Some(p) = &report.parameters {
        let cells: Vec<String> = Superquadric::PARAM_NAMES
            .iter()
            .zip(p.all.mae)
            .map(|(n, v)| format!("{n} {v:.3}"))
            .collect();
        println!("parameter MAE (n={}): {}", p.all.n, cells.join(", "));
    }
    let s = &report.segmentation.all;
    println!("mask mAP {:.2}, mAP50 {:.2}, mAP75 {:.2}", s.map, s.map50, s.map75);
    println!("reconstruction MAE {:.4}", report.reconstruction.mean_mae);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_matching_prefers_highest_iou() {
        let ious = vec![vec![0.6, 0.9], vec![0.7, 0.0]];
        let m = match_by_iou(&ious, 0.5);
        assert_eq!(m, vec![(0, 1, 0.9), (1, 0, 0.7)]);
        assert!(match_by_iou(&ious, 0.95).is_empty());
    }
}
