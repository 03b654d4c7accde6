use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use sqrec::compose::compose;
use sqrec::io;

use crate::common::write_run_config;

/// Pixel offset written as `DX,DY`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shift(pub i64, pub i64);

impl FromStr for Shift {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected DX,DY, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<i64>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Shift(p(a)?, p(b)?))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    /// Depth raster to combine; repeat for each input.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Offset of the matching input; omit to use zero shifts throughout.
    #[arg(long = "shift", allow_hyphen_values = true)]
    pub shifts: Vec<Shift>,
    /// Also write a PNG preview next to the output.
    #[arg(long)]
    pub preview: bool,
    /// Output `.sqri` file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &ComposeArgs) -> Result<()> {
    if args.inputs.len() < 2 {
        bail!("compose needs at least 2 --input rasters, got {}", args.inputs.len());
    }
    if !args.shifts.is_empty() && args.shifts.len() != args.inputs.len() {
        bail!("{} --shift values for {} inputs", args.shifts.len(), args.inputs.len());
    }
    let mut inputs = Vec::with_capacity(args.inputs.len());
    for (k, p) in args.inputs.iter().enumerate() {
        let img = io::read_range(p).with_context(|| format!("reading {}", p.display()))?;
        let s = args.shifts.get(k).copied().unwrap_or(Shift(0, 0));
        inputs.push((img, (s.0, s.1)));
    }
    let out = compose(&inputs)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    io::write_range(&args.out, &out)?;
    if args.preview {
        io::write_depth_png(args.out.with_extension("png"), &out)?;
    }
    let cfg_path = args.out.with_extension("run_config.json");
    write_run_config(&cfg_path, "compose", args)?;
    println!("{}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_parsing() {
        assert_eq!("3,-4".parse::<Shift>().unwrap(), Shift(3, -4));
        assert_eq!(" -1 , 2".parse::<Shift>().unwrap(), Shift(-1, 2));
        assert!("3".parse::<Shift>().is_err());
        assert!("a,b".parse::<Shift>().is_err());
    }
}
