//! Random scene sampling with bounding-box overlap rejection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SceneBounds, Superquadric};
use crate::render::{InstanceMaskImage, RangeImage, Scene};

/// Number of whole-scene restarts before a configuration is declared
/// infeasible.
pub const MAX_SCENE_RESTARTS: usize = 100;

/// Half-open continuous range `[lo, hi)`; `lo == hi` is the constant `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::InvalidConfig(format!(
                "{name} range [{}, {}) is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Inclusive instance-count range.
    pub count_min: usize,
    pub count_max: usize,
    pub size_range: Range,
    pub shape_range: Range,
    pub xy_range: Range,
    pub z_range: Range,
    pub iou_threshold: f64,
    pub max_attempts_per_instance: usize,
    pub bounds: SceneBounds,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            count_min: 1,
            count_max: 5,
            size_range: Range::new(25.0, 76.0),
            shape_range: Range::new(0.01, 1.0),
            xy_range: Range::new(88.0, 169.0),
            z_range: Range::new(100.0, 150.0),
            iou_threshold: 0.25,
            max_attempts_per_instance: 1000,
            bounds: SceneBounds::default(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count_min == 0 || self.count_min > self.count_max {
            return Err(Error::InvalidConfig(format!(
                "count range {}..={} is empty or includes zero",
                self.count_min, self.count_max
            )));
        }
        if self.count_max >= u16::MAX as usize {
            return Err(Error::InvalidConfig("count_max exceeds id capacity".into()));
        }
        self.size_range.validate("size")?;
        self.shape_range.validate("shape")?;
        self.xy_range.validate("xy")?;
        self.z_range.validate("z")?;
        if self.size_range.lo <= 0.0 {
            return Err(Error::InvalidConfig("sizes must be positive".into()));
        }
        if self.shape_range.lo < crate::geometry::EPS_MIN || self.shape_range.hi > crate::geometry::EPS_MAX {
            return Err(Error::InvalidConfig(format!(
                "shape range must lie in [{}, {}]",
                crate::geometry::EPS_MIN,
                crate::geometry::EPS_MAX
            )));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::InvalidConfig(format!(
                "iou_threshold {} outside [0, 1]",
                self.iou_threshold
            )));
        }
        if self.max_attempts_per_instance == 0 {
            return Err(Error::InvalidConfig("max_attempts_per_instance must be >= 1".into()));
        }
        self.bounds.validate()
    }

    fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Superquadric {
        let a1 = self.size_range.sample(rng);
        let a2 = self.size_range.sample(rng);
        let a3 = self.size_range.sample(rng);
        let eps1 = self.shape_range.sample(rng);
        let eps2 = self.shape_range.sample(rng);
        let x0 = self.xy_range.sample(rng);
        let y0 = self.xy_range.sample(rng);
        let z0 = self.z_range.sample(rng);
        Superquadric { a1, a2, a3, eps1, eps2, x0, y0, z0 }
    }
}

/// SplitMix64 finalizer; derives independent per-scene seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `scene_id` under the dataset seed `seed`.
pub fn scene_seed(seed: u64, scene_id: u64) -> u64 {
    mix_seed(seed, scene_id)
}

/// Samples one scene. Each new instance is redrawn until its bounding box
/// IoU with every accepted instance is at most `iou_threshold`; after
/// `max_attempts_per_instance` consecutive rejections the scene starts over
/// with a fresh count.
pub fn sample_scene<R: Rng + ?Sized>(cfg: &SamplerConfig, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let grid = cfg.bounds.as_box();
    for _ in 0..MAX_SCENE_RESTARTS {
        let count = rng.random_range(cfg.count_min..=cfg.count_max);
        let mut accepted: Vec<Superquadric> = Vec::with_capacity(count);
        let mut stuck = false;
        while accepted.len() < count {
            let mut placed = false;
            for _ in 0..cfg.max_attempts_per_instance {
                let cand = cfg.sample_instance(rng);
                let bb = cand.bounding_box();
                if !grid.contains(bb.min, 0.0) || !grid.contains(bb.max, 0.0) {
                    continue;
                }
                if accepted
                    .iter()
                    .all(|o| bb.iou(&o.bounding_box()) <= cfg.iou_threshold)
                {
                    accepted.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                stuck = true;
                break;
            }
        }
        if !stuck {
            return Ok(Scene {
                superquadrics: accepted,
                bounds: cfg.bounds,
                seed: 0,
            });
        }
    }
    Err(Error::InfeasibleConfig { restarts: MAX_SCENE_RESTARTS })
}

/// Samples scene `scene_id` from its own deterministic stream.
pub fn sample_scene_by_id(cfg: &SamplerConfig, scene_id: u64) -> Result<Scene> {
    let seed = scene_seed(cfg.seed, scene_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = sample_scene(cfg, &mut rng)?;
    scene.seed = seed;
    Ok(scene)
}

/// Keeps the depth of pixels labelled `k` and clears everything else.
pub fn crop_instance(range: &RangeImage, masks: &InstanceMaskImage, k: u16) -> Result<RangeImage> {
    if !range.same_size(masks.width, masks.height) {
        return Err(Error::SizeMismatch(format!(
            "range {}x{} vs masks {}x{}",
            range.width, range.height, masks.width, masks.height
        )));
    }
    let mut any = false;
    let depth = range
        .depth
        .iter()
        .zip(&masks.ids)
        .map(|(&d, &id)| {
            if id == k && k != 0 {
                any |= d != 0.0;
                d
            } else {
                0.0
            }
        })
        .collect();
    if !any {
        return Err(Error::EmptySegment(k));
    }
    RangeImage::from_vec(range.width, range.height, depth)
}
