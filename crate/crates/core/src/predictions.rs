//! Per-scene prediction files shared by the fitter front end, external
//! segmenters and the evaluator.
//!
//! A prediction directory holds, for every scene stem `scene_NNNNNN`:
//!
//! - `scene_NNNNNN.sqim`: the instance ids that were used (required);
//! - `scene_NNNNNN.json`: a [`ScenePrediction`] (optional for pure
//!   segmentation output, where only ids and confidences matter);
//! - `scene_NNNNNN.sqri`: a re-rendered reconstruction (optional).
//!
//! Parameter arrays use the manifest ordering
//! `[a1, a2, a3, eps1, eps2, x0, y0, z0]`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::scene_stem;
use crate::error::Result;
use crate::fit::{FitResult, InstanceRecovery};
use crate::geometry::Superquadric;
use crate::io;
use crate::metrics::BinaryMask;
use crate::render::InstanceMaskImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneStatus {
    #[default]
    Recovered,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
    pub point_count: usize,
}

impl From<&FitResult> for FitSummary {
    fn from(r: &FitResult) -> Self {
        Self {
            initial_cost: r.initial_cost,
            cost: r.cost,
            iterations: r.iterations,
            converged: r.converged,
            wall_time: r.wall_time,
            point_count: r.point_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    /// Id of the instance in the accompanying `.sqim` raster.
    pub id: u16,
    /// Detection score used to rank instances for AP.
    pub confidence: f64,
    #[serde(default)]
    pub params: Option<[f64; 8]>,
    #[serde(default)]
    pub fit: Option<FitSummary>,
    #[serde(default)]
    pub skip_reason: Option<String>,
}

impl InstancePrediction {
    pub fn model(&self) -> Option<Superquadric> {
        self.params.map(Superquadric::from_array)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePrediction {
    pub scene_id: u64,
    #[serde(default)]
    pub status: SceneStatus,
    #[serde(default)]
    pub warning: Option<String>,
    #[serde(default)]
    pub source: String,
    /// Seconds spent on the whole scene.
    #[serde(default)]
    pub wall_time: f64,
    #[serde(default)]
    pub instances: Vec<InstancePrediction>,
}

impl ScenePrediction {
    pub fn skipped(scene_id: u64, source: &str, warning: String) -> Self {
        Self {
            scene_id,
            status: SceneStatus::Skipped,
            warning: Some(warning),
            source: source.to_string(),
            wall_time: 0.0,
            instances: Vec::new(),
        }
    }

    /// Instances that carry parameters, in id order.
    pub fn models(&self) -> Vec<Superquadric> {
        let mut v: Vec<&InstancePrediction> = self.instances.iter().filter(|i| i.params.is_some()).collect();
        v.sort_by_key(|i| i.id);
        v.iter().filter_map(|i| i.model()).collect()
    }

    pub fn confidence(&self, id: u16) -> Option<f64> {
        self.instances.iter().find(|i| i.id == id).map(|i| i.confidence)
    }
}

/// Builds a prediction record from fitter output. `confidence` supplies the
/// score of each id.
pub fn from_recovery(
    scene_id: u64,
    source: &str,
    recovered: &[InstanceRecovery],
    confidence: impl Fn(u16) -> f64,
    wall_time: f64,
) -> ScenePrediction {
    let instances = recovered
        .iter()
        .map(|r| match r {
            InstanceRecovery::Fitted { id, result } => InstancePrediction {
                id: *id,
                confidence: confidence(*id),
                params: Some(result.params.to_array()),
                fit: Some(result.into()),
                skip_reason: None,
            },
            InstanceRecovery::Skipped { id, reason, .. } => InstancePrediction {
                id: *id,
                confidence: confidence(*id),
                params: None,
                fit: None,
                skip_reason: Some(reason.clone()),
            },
        })
        .collect();
    ScenePrediction {
        scene_id,
        status: SceneStatus::Recovered,
        warning: None,
        source: source.to_string(),
        wall_time,
        instances,
    }
}

/// Score for masks that come without one: the fraction of the image they
/// cover, so larger segments rank first.
pub fn area_confidence(masks: &InstanceMaskImage, id: u16) -> f64 {
    BinaryMask::from_ids(masks, id).area_fraction()
}

pub fn json_path(dir: &Path, scene_id: u64) -> PathBuf {
    dir.join(format!("{}.json", scene_stem(scene_id)))
}

pub fn mask_path(dir: &Path, scene_id: u64) -> PathBuf {
    dir.join(format!("{}.sqim", scene_stem(scene_id)))
}

pub fn range_path(dir: &Path, scene_id: u64) -> PathBuf {
    dir.join(format!("{}.sqri", scene_stem(scene_id)))
}

/// Loads the prediction of `scene_id` from `dir`. Returns `None` when the
/// scene has no mask raster. A missing JSON yields area-based confidences
/// and no parameters.
pub fn load(dir: &Path, scene_id: u64) -> Result<Option<(ScenePrediction, Option<InstanceMaskImage>)>> {
    let mp = mask_path(dir, scene_id);
    let jp = json_path(dir, scene_id);
    let masks = if mp.exists() { Some(io::read_mask(&mp)?) } else { None };
    let pred = if jp.exists() {
        let mut p: ScenePrediction = io::read_json(&jp)?;
        if let Some(m) = &masks {
            for id in m.present_ids() {
                if p.confidence(id).is_none() {
                    p.instances.push(InstancePrediction {
                        id,
                        confidence: area_confidence(m, id),
                        params: None,
                        fit: None,
                        skip_reason: None,
                    });
                }
            }
        }
        p
    } else if let Some(m) = &masks {
        ScenePrediction {
            scene_id,
            status: SceneStatus::Recovered,
            warning: None,
            source: "external".into(),
            wall_time: 0.0,
            instances: m
                .present_ids()
                .into_iter()
                .map(|id| InstancePrediction {
                    id,
                    confidence: area_confidence(m, id),
                    params: None,
                    fit: None,
                    skip_reason: None,
                })
                .collect(),
        }
    } else {
        return Ok(None);
    };
    Ok(Some((pred, masks)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sidecar_parses() {
        let p: ScenePrediction =
            serde_json::from_str(r#"{"scene_id": 4, "instances": [{"id": 1, "confidence": 0.9}]}"#).unwrap();
        assert_eq!(p.status, SceneStatus::Recovered);
        assert_eq!(p.confidence(1), Some(0.9));
        assert!(p.models().is_empty());
    }

    #[test]
    fn missing_json_falls_back_to_area() {
        let dir = tempfile::tempdir().unwrap();
        let m = InstanceMaskImage::from_vec(2, 2, vec![1, 1, 2, 0]).unwrap();
        io::write_mask(mask_path(dir.path(), 9), &m).unwrap();
        let (p, masks) = load(dir.path(), 9).unwrap().unwrap();
        assert_eq!(masks.unwrap(), m);
        assert_eq!(p.confidence(1), Some(0.5));
        assert_eq!(p.confidence(2), Some(0.25));
        assert!(load(dir.path(), 10).unwrap().is_none());
    }
}
