//! COCO-style mask average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mask::{mask_iou, BinaryMask};
use super::stats::{box_stats, BoxStats};
use crate::error::Result;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Recall sampling points 0.00, 0.01, ..., 1.00.
fn recall_points() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| i as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    pub score: f64,
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub predictions: Vec<ScoredMask>,
    pub truths: Vec<BinaryMask>,
    /// Number of superquadrics in the source scene, used for breakdowns.
    pub scene_count: usize,
}

/// Pairwise IoUs of one sample, `ious[pred][truth]`, with predictions in
/// descending score order.
struct PreparedSample {
    scores: Vec<f64>,
    ious: Vec<Vec<f64>>,
    truths: usize,
}

fn prepare(sample: &SegSample) -> Result<PreparedSample> {
    let mut order: Vec<usize> = (0..sample.predictions.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| {
        sample.predictions[b]
            .score
            .partial_cmp(&sample.predictions[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut ious = Vec::with_capacity(order.len());
    for &p in &order {
        let row = sample
            .truths
            .iter()
            .map(|t| mask_iou(&sample.predictions[p].mask, t))
            .collect::<Result<Vec<_>>>()?;
        ious.push(row);
    }
    Ok(PreparedSample {
        scores: order.iter().map(|&p| sample.predictions[p].score).collect(),
        ious,
        truths: sample.truths.len(),
    })
}

/// Greedy matching: each prediction, best score first, takes the unmatched
/// truth with the highest IoU at or above `threshold`.
fn match_sample(s: &PreparedSample, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; s.truths];
    s.ious
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (t, &iou) in row.iter().enumerate() {
                if taken[t] || iou < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((t, iou));
                }
            }
            match best {
                Some((t, _)) => {
                    taken[t] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP in `[0, 1]` with 101-point interpolation. Zero when there is no
/// ground truth.
fn average_precision_prepared(samples: &[&PreparedSample], threshold: f64) -> f64 {
    let total_truths: usize = samples.iter().map(|s| s.truths).sum();
    if total_truths == 0 {
        return 0.0;
    }
    let mut dets: Vec<(f64, bool)> = Vec::new();
    for s in samples {
        let hits = match_sample(s, threshold);
        dets.extend(s.scores.iter().copied().zip(hits));
    }
    dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0.0, 0.0);
    for &(_, hit) in &dets {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / total_truths as f64);
        precision.push(tp / (tp + fp));
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let sum: f64 = recall_points()
        .map(|rt| {
            let idx = recall.partition_point(|&r| r < rt);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    sum / 101.0
}

/// AP (as a fraction) of `samples` at one IoU threshold.
pub fn average_precision(samples: &[SegSample], threshold: f64) -> Result<f64> {
    let prepared = samples.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PreparedSample> = prepared.iter().collect();
    Ok(average_precision_prepared(&refs, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    /// Mean AP over the thresholds, in percent.
    pub map: f64,
    pub map50: f64,
    pub map75: f64,
    /// `(threshold, AP in percent)` pairs.
    pub per_threshold: Vec<(f64, f64)>,
    pub images: usize,
    pub truths: usize,
    pub predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvalReport {
    pub all: SegScores,
    /// Keyed by scene superquadric count.
    pub by_count: BTreeMap<usize, SegScores>,
    /// Distribution of each truth's best IoU against any prediction.
    pub best_iou: Option<BoxStats>,
}

fn scores_for(samples: &[&PreparedSample], thresholds: &[f64]) -> SegScores {
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (t, 100.0 * average_precision_prepared(samples, t)))
        .collect();
    let map = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64
    };
    SegScores {
        map,
        map50: 100.0 * average_precision_prepared(samples, 0.5),
        map75: 100.0 * average_precision_prepared(samples, 0.75),
        per_threshold,
        images: samples.len(),
        truths: samples.iter().map(|s| s.truths).sum(),
        predictions: samples.iter().map(|s| s.scores.len()).sum(),
    }
}

/// COCO-style segmentation scores, in percent, pooled over all samples and
/// broken down by scene count.
pub fn mask_map(samples: &[SegSample], thresholds: &[f64]) -> Result<SegEvalReport> {
    let prepared = samples.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let all_refs: Vec<&PreparedSample> = prepared.iter().collect();
    let all = scores_for(&all_refs, thresholds);

    let mut groups: BTreeMap<usize, Vec<&PreparedSample>> = BTreeMap::new();
    for (s, p) in samples.iter().zip(&prepared) {
        groups.entry(s.scene_count).or_default().push(p);
    }
    let by_count = groups
        .into_iter()
        .map(|(k, v)| (k, scores_for(&v, thresholds)))
        .collect();

    let best: Vec<f64> = prepared
        .iter()
        .flat_map(|p| {
            (0..p.truths).map(move |t| p.ious.iter().map(|row| row[t]).fold(0.0, f64::max))
        })
        .collect();
    Ok(SegEvalReport {
        all,
        by_count,
        best_iou: box_stats(&best),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(w: u32, on: std::ops::Range<u32>) -> BinaryMask {
        let mut m = BinaryMask::new(w, 1);
        for x in on {
            m.set(x, 0, true);
        }
        m
    }

    #[test]
    fn perfect_predictions_score_100() {
        let truths = vec![strip(20, 0..5), strip(20, 8..12)];
        let sample = SegSample {
            predictions: truths.iter().map(|m| ScoredMask { mask: m.clone(), score: 1.0 }).collect(),
            truths,
            scene_count: 2,
        };
        let r = mask_map(&[sample], &coco_thresholds()).unwrap();
        assert_eq!(r.all.map, 100.0);
        assert_eq!(r.all.map50, 100.0);
        assert!(r.all.per_threshold.iter().all(|p| p.1 == 100.0));
        assert_eq!(r.by_count[&2].map, 100.0);
    }

    #[test]
    fn no_predictions_score_zero() {
        let sample = SegSample { predictions: vec![], truths: vec![strip(10, 0..3)], scene_count: 1 };
        let r = mask_map(&[sample], &coco_thresholds()).unwrap();
        assert_eq!(r.all.map, 0.0);
        assert_eq!(r.all.map50, 0.0);
    }

    #[test]
    fn hand_traced_precision_recall() {
        // truth covers 0..10; first prediction IoU 0.6, second IoU 0.2
        let truth = strip(30, 0..10);
        let good = strip(30, 4..10); // 6/10
        let poor = strip(30, 8..10); // 2/10
        assert!((mask_iou(&good, &truth).unwrap() - 0.6).abs() < 1e-12);
        assert!((mask_iou(&poor, &truth).unwrap() - 0.2).abs() < 1e-12);
        let sample = SegSample {
            predictions: vec![
                ScoredMask { mask: poor, score: 0.8 },
                ScoredMask { mask: good, score: 0.9 },
            ],
            truths: vec![truth],
            scene_count: 1,
        };
        let ap = average_precision(std::slice::from_ref(&sample), 0.5).unwrap();
        assert_eq!(ap, 1.0);
        // at 0.75 nothing matches
        assert_eq!(average_precision(&[sample], 0.75).unwrap(), 0.0);
    }

    #[test]
    fn false_positive_first_halves_precision() {
        // a confident miss ahead of the hit: precision 0.5 at recall 1
        let truth = strip(30, 0..10);
        let sample = SegSample {
            predictions: vec![
                ScoredMask { mask: strip(30, 20..30), score: 0.9 },
                ScoredMask { mask: truth.clone(), score: 0.5 },
            ],
            truths: vec![truth],
            scene_count: 1,
        };
        assert!((average_precision(&[sample], 0.5).unwrap() - 0.5).abs() < 1e-12);
    }
}
