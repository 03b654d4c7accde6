//! Train/validation/test dataset generation and its JSON manifest.
//!
//! Layout under the output root:
//!
//! ```text
//! manifest.json
//! train/scene_000000.sqri   depth raster
//! train/scene_000000.sqim   instance ids
//! train/scene_000000.png    16-bit depth preview
//! val/...
//! test/...
//! ```
//!
//! Scene ids are global and consecutive: train first, then val, then test.
//! Every scene is sampled from its own stream seeded by `(seed, id)`, so
//! output does not depend on the number of worker threads.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Superquadric;
use crate::io;
use crate::render::{render_with_view, InstanceMaskImage, RangeImage, Scene, View};
use crate::sample::{mix_seed, sample_scene_by_id, SamplerConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Stream index for depth noise, kept apart from the sampling stream.
const NOISE_STREAM: u64 = 0x6e6f_6973_65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub scene_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

impl Splits {
    pub fn get(&self, split: Split) -> &SplitSummary {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut SplitSummary {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: u64,
    pub split: Split,
    pub seed: u64,
    /// `[a1, a2, a3, eps1, eps2, x0, y0, z0]` per instance; instance `k`
    /// carries id `k + 1` in the mask raster.
    pub superquadrics: Vec<[f64; 8]>,
    /// Paths relative to the manifest directory.
    pub range_path: String,
    pub mask_path: String,
    pub preview_path: Option<String>,
}

impl SceneRecord {
    pub fn models(&self) -> Vec<Superquadric> {
        self.superquadrics.iter().map(|p| Superquadric::from_array(*p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub splits: Splits,
    pub sampler_config: SamplerConfig,
    pub noise_sigma: f64,
    pub view: View,
    pub scenes: Vec<SceneRecord>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = io::read_json(path.as_ref())?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.as_ref().to_path_buf(),
                reason: format!("unsupported manifest version {}", m.version),
            });
        }
        Ok(m)
    }

    pub fn scene(&self, id: u64) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn split_scenes(&self, split: Split) -> impl Iterator<Item = &SceneRecord> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    /// The scene described by `record`, ready to render.
    pub fn scene_of(&self, record: &SceneRecord) -> Scene {
        Scene {
            superquadrics: record.models(),
            bounds: self.sampler_config.bounds,
            seed: record.seed,
        }
    }

    /// Re-renders a record exactly as it was written.
    pub fn render_record(&self, record: &SceneRecord) -> Result<(RangeImage, InstanceMaskImage)> {
        let (mut range, masks) = render_with_view(&self.scene_of(record), self.view)?;
        add_depth_noise(&mut range, self.noise_sigma, record.seed)?;
        Ok((range, masks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    /// Standard deviation of Gaussian noise added to foreground depth.
    pub noise_sigma: f64,
    pub view: View,
    pub previews: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self { noise_sigma: 0.0, view: View::TopDown, previews: true }
    }
}

/// Adds zero-mean Gaussian noise to every foreground pixel, drawn from a
/// stream tied to the scene seed. `sigma == 0` leaves the raster untouched.
pub fn add_depth_noise(range: &mut RangeImage, sigma: f64, scene_seed: u64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scene_seed, NOISE_STREAM));
    for d in range.depth.iter_mut().filter(|d| **d != 0.0) {
        *d = (*d as f64 + normal.sample(&mut rng)) as f32;
    }
    Ok(())
}

pub fn scene_stem(id: u64) -> String {
    format!("scene_{id:06}")
}

struct Rendered {
    record: SceneRecord,
    range: RangeImage,
    masks: InstanceMaskImage,
}

fn build_record(cfg: &SamplerConfig, id: u64, split: Split, opts: &GenerateOptions) -> Result<Rendered> {
    let scene = sample_scene_by_id(cfg, id)?;
    let (mut range, masks) = render_with_view(&scene, opts.view)?;
    add_depth_noise(&mut range, opts.noise_sigma, scene.seed)?;
    let stem = format!("{}/{}", split, scene_stem(id));
    Ok(Rendered {
        record: SceneRecord {
            id,
            split,
            seed: scene.seed,
            superquadrics: scene.superquadrics.iter().map(|s| s.to_array()).collect(),
            range_path: format!("{stem}.sqri"),
            mask_path: format!("{stem}.sqim"),
            preview_path: opts.previews.then(|| format!("{stem}.png")),
        },
        range,
        masks,
    })
}

fn persist(root: &Path, r: &Rendered) -> Result<()> {
    io::write_range(root.join(&r.record.range_path), &r.range)?;
    io::write_mask(root.join(&r.record.mask_path), &r.masks)?;
    if let Some(p) = &r.record.preview_path {
        io::write_depth_png(root.join(p), &r.range)?;
    }
    Ok(())
}

/// Samples, renders and writes `n_train + n_val + n_test` scenes under
/// `out_root` and writes the manifest last. Uses the current rayon pool.
pub fn generate_dataset(
    cfg: &SamplerConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    out_root: impl AsRef<Path>,
    opts: &GenerateOptions,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if !(opts.noise_sigma.is_finite() && opts.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sigma {} must be finite and >= 0", opts.noise_sigma)));
    }
    let root = out_root.as_ref();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut jobs: Vec<(u64, Split)> = Vec::with_capacity(n_train + n_val + n_test);
    for (split, n) in Split::ALL.into_iter().zip([n_train, n_val, n_test]) {
        if n > 0 {
            let dir = root.join(split.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let base = jobs.len() as u64;
        jobs.extend((0..n as u64).map(|i| (base + i, split)));
    }

    let records = jobs
        .par_iter()
        .map(|&(id, split)| {
            let r = build_record(cfg, id, split, opts)?;
            persist(root, &r)?;
            Ok(r.record)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut splits = Splits::default();
    for r in &records {
        let s = splits.get_mut(r.split);
        s.count += 1;
        s.scene_ids.push(r.id);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        splits,
        sampler_config: cfg.clone(),
        noise_sigma: opts.noise_sigma,
        view: opts.view,
        scenes: records,
    };
    io::write_json(root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SceneBounds;

    fn small_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            bounds: SceneBounds::new(64, 64, 64).unwrap(),
            size_range: crate::sample::Range::new(5.0, 12.0),
            xy_range: crate::sample::Range::new(20.0, 44.0),
            z_range: crate::sample::Range::new(25.0, 38.0),
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn manifest_reproduces_rasters() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions { noise_sigma: 0.3, ..GenerateOptions::default() };
        let m = generate_dataset(&small_cfg(3), 3, 1, 2, dir.path(), &opts).unwrap();
        assert_eq!(m.splits.train.scene_ids, vec![0, 1, 2]);
        assert_eq!(m.splits.val.scene_ids, vec![3]);
        assert_eq!(m.splits.test.scene_ids, vec![4, 5]);
        let path = dir.path().join(MANIFEST_FILE);
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded, m);
        for rec in &loaded.scenes {
            let (range, masks) = loaded.render_record(rec).unwrap();
            assert_eq!(io::read_range(resolve(&path, &rec.range_path)).unwrap(), range);
            assert_eq!(io::read_mask(resolve(&path, &rec.mask_path)).unwrap(), masks);
        }
    }

    #[test]
    fn empty_splits_write_no_scene_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small_cfg(1), 0, 0, 1, dir.path(), &GenerateOptions::default()).unwrap();
        assert_eq!(m.splits.train.count, 0);
        assert!(!dir.path().join("train").exists());
        assert!(dir.path().join("test/scene_000000.sqri").exists());
        assert!(dir.path().join("test/scene_000000.png").exists());
    }

    #[test]
    fn negative_noise_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions { noise_sigma: -1.0, ..GenerateOptions::default() };
        assert!(generate_dataset(&small_cfg(1), 1, 0, 0, dir.path(), &opts).is_err());
    }
}
