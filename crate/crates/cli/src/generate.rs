use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use sqrec::dataset::{generate_dataset, GenerateOptions, MANIFEST_FILE};
use sqrec::sample::{Range, SamplerConfig};
use sqrec::{SceneBounds, View};

use crate::common::{with_jobs, write_run_config, RUN_CONFIG_FILE};

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long, default_value_t = 1)]
    pub count_min: usize,
    #[arg(long, default_value_t = 5)]
    pub count_max: usize,
    #[arg(long, default_value_t = 0.25)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 25.0)]
    pub size_min: f64,
    #[arg(long, default_value_t = 76.0)]
    pub size_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub shape_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub shape_max: f64,
    #[arg(long, default_value_t = 88.0)]
    pub xy_min: f64,
    #[arg(long, default_value_t = 169.0)]
    pub xy_max: f64,
    #[arg(long, default_value_t = 100.0)]
    pub z_min: f64,
    #[arg(long, default_value_t = 150.0)]
    pub z_max: f64,
    /// Consecutive rejections before a scene is restarted.
    #[arg(long, default_value_t = 1000)]
    pub max_attempts: usize,
    /// Raster side length; the grid is a cube of this size.
    #[arg(long, default_value_t = 256)]
    pub grid: u32,
    /// Standard deviation of Gaussian noise added to foreground depth.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Render through a fixed oblique rotation instead of straight down.
    #[arg(long)]
    pub axonometric: bool,
    /// Skip the PNG previews.
    #[arg(long)]
    pub no_preview: bool,
    /// Dataset directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl GenerateArgs {
    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            count_min: self.count_min,
            count_max: self.count_max,
            size_range: Range::new(self.size_min, self.size_max),
            shape_range: Range::new(self.shape_min, self.shape_max),
            xy_range: Range::new(self.xy_min, self.xy_max),
            z_range: Range::new(self.z_min, self.z_max),
            iou_threshold: self.iou_threshold,
            max_attempts_per_instance: self.max_attempts,
            bounds: SceneBounds::new(self.grid, self.grid, self.grid)?,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let cfg = args.sampler_config()?;
    let opts = GenerateOptions {
        noise_sigma: args.noise_sigma,
        view: if args.axonometric { View::Axonometric } else { View::TopDown },
        previews: !args.no_preview,
    };
    let manifest = with_jobs(args.jobs, || {
        generate_dataset(&cfg, args.train, args.val, args.test, &args.out, &opts)
    })?
    .with_context(|| format!("generating dataset in {}", args.out.display()))?;
    write_run_config(&args.out.join(RUN_CONFIG_FILE), "generate", args)?;
    eprintln!(
        "generated {} scenes (train {}, val {}, test {})",
        manifest.scenes.len(),
        manifest.splits.train.count,
        manifest.splits.val.count,
        manifest.splits.test.count
    );
    println!("{}", args.out.join(MANIFEST_FILE).display());
    Ok(())
}
