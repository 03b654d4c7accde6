//! Evaluation metrics: parameter errors, mask AP, reconstruction error.

pub mod map;
pub mod mask;
pub mod params;
pub mod reference;
pub mod stats;

pub use map::{average_precision, coco_thresholds, mask_map, ScoredMask, SegEvalReport, SegSample, SegScores};
pub use mask::{corrupt_instances, corrupt_mask, mask_iou, BinaryMask, CorruptMode};
pub use params::{param_mae, ParamErrorReport, ParamPair, ParamRow};
pub use stats::{box_stats, wilcoxon_signed_rank, BoxStats, SignedRank};

use crate::error::{Error, Result};
use crate::render::RangeImage;

/// Mean absolute depth difference over every pixel, background included.
pub fn reconstruction_mae(truth: &RangeImage, recon: &RangeImage) -> Result<f64> {
    if !truth.same_size(recon.width, recon.height) {
        return Err(Error::SizeMismatch(format!(
            "truth {}x{} vs reconstruction {}x{}",
            truth.width, truth.height, recon.width, recon.height
        )));
    }
    if truth.depth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = truth
        .depth
        .iter()
        .zip(&recon.depth)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / truth.depth.len() as f64)
}
