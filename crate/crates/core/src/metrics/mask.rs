//! Binary masks, mask IoU and synthetic segmentation corruption.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::InstanceMaskImage;
use crate::sample::mix_seed;

/// Side of the square blocks removed by [`CorruptMode::DropRandomBlocks`].
pub const DROP_BLOCK: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::SizeMismatch(format!(
                "{}x{} mask with {} values",
                width,
                height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Pixels labelled `id` in an instance raster.
    pub fn from_ids(masks: &InstanceMaskImage, id: u16) -> Self {
        Self {
            width: masks.width,
            height: masks.height,
            data: masks.ids.iter().map(|&v| v == id && id != 0).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Area over image size; the confidence assigned to masks that come
    /// without a detector score.
    pub fn area_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.area() as f64 / self.data.len() as f64
        }
    }

    /// Inclusive `(x_min, y_min, x_max, y_max)` of the set pixels.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    fn check_same_size(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::SizeMismatch(format!(
                "masks {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_size(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptMode {
    /// Peel `round(severity * R)` layers off the border, `R` being the
    /// number of layers the mask can lose while staying non-empty.
    ErodeBorder,
    /// Drop each `DROP_BLOCK`-sized image block with probability `severity`.
    DropRandomBlocks,
    /// Translate by `round(severity * extent)` pixels along one of the
    /// eight compass directions.
    Shift,
}

impl CorruptMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptMode::ErodeBorder => "erode-border",
            CorruptMode::DropRandomBlocks => "drop-random-blocks",
            CorruptMode::Shift => "shift",
        }
    }
}

impl FromStr for CorruptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erode-border" => Ok(CorruptMode::ErodeBorder),
            "drop-random-blocks" => Ok(CorruptMode::DropRandomBlocks),
            "shift" => Ok(CorruptMode::Shift),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl std::fmt::Display for CorruptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Degrades a mask to emulate imperfect segmentation.
///
/// The random draws do not depend on `severity`, so two calls with equal
/// RNG states produce nested results: a higher severity never keeps a
/// pixel that a lower one removed (erosion and block dropping), or moves
/// the mask further along the same direction (shift).
pub fn corrupt_mask<R: Rng + ?Sized>(
    mask: &BinaryMask,
    mode: CorruptMode,
    severity: f64,
    rng: &mut R,
) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::InvalidConfig(format!("severity {severity} outside [0, 1]")));
    }
    Ok(match mode {
        CorruptMode::ErodeBorder => erode_border(mask, severity),
        CorruptMode::DropRandomBlocks => drop_blocks(mask, severity, rng),
        CorruptMode::Shift => shift(mask, severity, rng),
    })
}

/// Chessboard distance from each set pixel to the nearest unset pixel,
/// with everything outside the image counted as unset.
fn chessboard_distance(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut d: Vec<u32> = mask.data.iter().map(|&v| if v { u32::MAX } else { 0 }).collect();
    let at = |d: &Vec<u32>, x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            d[(y * w + x) as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if d[i] == 0 {
                continue;
            }
            let m = at(&d, x - 1, y)
                .min(at(&d, x - 1, y - 1))
                .min(at(&d, x, y - 1))
                .min(at(&d, x + 1, y - 1));
            d[i] = d[i].min(m.saturating_add(1));
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = (y * w + x) as usize;
            if d[i] == 0 {
                continue;
            }
            let m = at(&d, x + 1, y)
                .min(at(&d, x + 1, y + 1))
                .min(at(&d, x, y + 1))
                .min(at(&d, x - 1, y + 1));
            d[i] = d[i].min(m.saturating_add(1));
        }
    }
    d
}

fn erode_border(mask: &BinaryMask, severity: f64) -> BinaryMask {
    let dist = chessboard_distance(mask);
    let max_d = dist.iter().copied().max().unwrap_or(0);
    if max_d == 0 {
        return mask.clone();
    }
    let layers = (severity * (max_d - 1) as f64).round() as u32;
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: dist.iter().map(|&d| d > layers).collect(),
    }
}

fn drop_blocks<R: Rng + ?Sized>(mask: &BinaryMask, severity: f64, rng: &mut R) -> BinaryMask {
    let bw = mask.width.div_ceil(DROP_BLOCK);
    let bh = mask.height.div_ceil(DROP_BLOCK);
    let dropped: Vec<bool> = (0..bw * bh).map(|_| rng.random::<f64>() < severity).collect();
    let mut out = mask.clone();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if dropped[((y / DROP_BLOCK) * bw + x / DROP_BLOCK) as usize] {
                out.set(x, y, false);
            }
        }
    }
    out
}

const DIRECTIONS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn shift<R: Rng + ?Sized>(mask: &BinaryMask, severity: f64, rng: &mut R) -> BinaryMask {
    let (dx, dy) = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];
    let Some((x0, y0, x1, y1)) = mask.bbox() else {
        return mask.clone();
    };
    let extent = (x1 - x0 + 1).max(y1 - y0 + 1) as f64;
    let d = (severity * extent).round() as i64;
    translate(mask, dx * d, dy * d)
}

/// Corrupts every instance of an id raster independently, each with its
/// own stream derived from `(seed, id)`. Where corrupted masks overlap, the
/// lower id keeps the pixel.
pub fn corrupt_instances(
    masks: &InstanceMaskImage,
    mode: CorruptMode,
    severity: f64,
    seed: u64,
) -> Result<InstanceMaskImage> {
    let mut out = InstanceMaskImage::new(masks.width, masks.height);
    for id in masks.present_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id as u64));
        let m = corrupt_mask(&BinaryMask::from_ids(masks, id), mode, severity, &mut rng)?;
        for (o, on) in out.ids.iter_mut().zip(&m.data) {
            if *on && *o == 0 {
                *o = id;
            }
        }
    }
    Ok(out)
}

/// Moves every set pixel by `(dx, dy)`; pixels leaving the frame are lost.
pub fn translate(mask: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    let mut out = BinaryMask::new(mask.width, mask.height);
    let (w, h) = (mask.width as i64, mask.height as i64);
    for y in 0..h {
        for x in 0..w {
            if mask.data[(y * w + x) as usize] {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    out.data[(ny * w + nx) as usize] = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn solid(w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_vec(w, h, vec![true; (w * h) as usize]).unwrap()
    }

    #[test]
    fn iou_hand_cases() {
        let a = BinaryMask::from_vec(3, 1, vec![true, true, false]).unwrap();
        let b = BinaryMask::from_vec(3, 1, vec![false, true, true]).unwrap();
        let c = BinaryMask::from_vec(3, 1, vec![false, false, true]).unwrap();
        let d = BinaryMask::from_vec(3, 1, vec![true, false, false]).unwrap();
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&c, &d).unwrap(), 0.0);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::new(3, 1);
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        assert!(mask_iou(&a, &BinaryMask::new(1, 3)).is_err());
    }

    #[test]
    fn erode_solid_square_to_center() {
        let mut padded = BinaryMask::new(5, 5);
        for y in 1..4 {
            for x in 1..4 {
                padded.set(x, y, true);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in [solid(3, 3), padded] {
            let out = corrupt_mask(&m, CorruptMode::ErodeBorder, 1.0, &mut rng).unwrap();
            assert_eq!(out.area(), 1);
            let c = m.width / 2;
            assert!(out.get(c, c));
        }
    }

    #[test]
    fn zero_severity_is_identity() {
        let mut m = BinaryMask::new(20, 20);
        for y in 3..15 {
            for x in 5..12 {
                m.set(x, y, true);
            }
        }
        for mode in [CorruptMode::ErodeBorder, CorruptMode::DropRandomBlocks, CorruptMode::Shift] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            assert_eq!(corrupt_mask(&m, mode, 0.0, &mut rng).unwrap(), m);
        }
    }

    #[test]
    fn mode_parsing_and_severity_range() {
        assert_eq!("shift".parse::<CorruptMode>().unwrap(), CorruptMode::Shift);
        assert!(matches!("blur".parse::<CorruptMode>(), Err(Error::UnknownMode(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(corrupt_mask(&solid(2, 2), CorruptMode::Shift, 1.5, &mut rng).is_err());
    }

    #[test]
    fn shift_moves_whole_extent_at_full_severity() {
        let mut m = BinaryMask::new(30, 30);
        for y in 10..20 {
            for x in 10..20 {
                m.set(x, y, true);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = corrupt_mask(&m, CorruptMode::Shift, 1.0, &mut rng).unwrap();
        assert_eq!(mask_iou(&m, &out).unwrap(), 0.0);
        assert_eq!(out.area(), 100);
    }
}
