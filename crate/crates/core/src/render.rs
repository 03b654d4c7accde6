//! Range-image and instance-mask rendering.
//!
//! Pixel `(i, j)` samples the scene at `(i + 0.5, j + 0.5)`. The viewer sits
//! at `z = +inf` looking down `-z`, so the visible surface is the largest
//! `z` along each vertical line and depth values are stored as that `z`.
//! Background is `0.0` in the range image and id `0` in the mask image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb3, Point3, SceneBounds, Superquadric};

/// Default maximum number of superquadrics in a sampled scene.
pub const DEFAULT_MAX_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub superquadrics: Vec<Superquadric>,
    pub bounds: SceneBounds,
    /// Seed the scene was sampled with, 0 when built by hand.
    pub seed: u64,
}

impl Scene {
    pub fn new(superquadrics: Vec<Superquadric>, bounds: SceneBounds) -> Self {
        Self { superquadrics, bounds, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.superquadrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superquadrics.is_empty()
    }

    /// Checks what rendering needs: valid bounds, valid models and an
    /// instance count that fits the 16-bit id raster.
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.superquadrics.len() >= u16::MAX as usize {
            return Err(Error::InvalidScene(format!(
                "{} instances exceed the id capacity",
                self.superquadrics.len()
            )));
        }
        for (k, sq) in self.superquadrics.iter().enumerate() {
            sq.validate()
                .map_err(|e| Error::InvalidScene(format!("instance {}: {e}", k + 1)))?;
        }
        Ok(())
    }

    /// Full sampled-scene contract: `1 <= count <= max_count` and every
    /// bounding box inside the grid.
    pub fn validate_sampled(&self, max_count: usize) -> Result<()> {
        self.validate()?;
        if self.superquadrics.is_empty() || self.superquadrics.len() > max_count {
            return Err(Error::InvalidScene(format!(
                "instance count {} outside 1..={max_count}",
                self.superquadrics.len()
            )));
        }
        let grid = self.bounds.as_box();
        for (k, sq) in self.superquadrics.iter().enumerate() {
            let b = sq.bounding_box();
            if !grid.contains(b.min, 0.0) || !grid.contains(b.max, 0.0) {
                return Err(Error::InvalidScene(format!(
                    "instance {} bounding box leaves the grid",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Row-major depth raster, `depth[y * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
}

impl RangeImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width as usize * height as usize {
            return Err(Error::SizeMismatch(format!(
                "{}x{} raster with {} values",
                width,
                height,
                depth.len()
            )));
        }
        Ok(Self { width, height, depth })
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.depth[self.index(x, y)]
    }

    pub fn foreground_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d != 0.0).count()
    }

    pub fn same_size(&self, w: u32, h: u32) -> bool {
        self.width == w && self.height == h
    }
}

/// Row-major instance-id raster; `0` is background, `k` the k-th model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMaskImage {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u16>,
}

impl InstanceMaskImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::SizeMismatch(format!(
                "{}x{} id raster with {} values",
                width,
                height,
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self, id: u16) -> usize {
        self.ids.iter().filter(|&&v| v == id).count()
    }

    /// Sorted distinct non-zero ids.
    pub fn present_ids(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in &self.ids {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&k| seen[k as usize]).collect()
    }
}

/// Orientation of the scene frame relative to the image plane.
///
/// `TopDown` maps pixel indices straight to scene `x, y`. `Axonometric`
/// applies a fixed rotation about the grid center first so that the top
/// and two side faces of every box are in view. Only `TopDown` images are
/// understood by the fitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    #[default]
    TopDown,
    Axonometric,
}

/// Rigid map between view coordinates (pixel x, pixel y, depth) and scene
/// coordinates.
#[derive(Debug, Clone, Copy)]
struct ViewFrame {
    /// Rows are the view axes expressed in scene coordinates.
    rot: [[f64; 3]; 3],
    center: Point3,
}

impl ViewFrame {
    fn new(view: View, bounds: SceneBounds) -> Option<Self> {
        match view {
            View::TopDown => None,
            View::Axonometric => {
                // Rz(45 deg) followed by Rx(atan(1/sqrt 2)): the classic
                // isometric direction.
                let (sz, cz) = std::f64::consts::FRAC_PI_4.sin_cos();
                let (sx, cx) = (1.0f64 / 2f64.sqrt()).atan().sin_cos();
                let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
                let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
                let mut rot = [[0.0; 3]; 3];
                for (i, row) in rot.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (0..3).map(|k| rx[i][k] * rz[k][j]).sum();
                    }
                }
                let c = [
                    bounds.width as f64 / 2.0,
                    bounds.height as f64 / 2.0,
                    bounds.depth as f64 / 2.0,
                ];
                Some(Self { rot, center: c })
            }
        }
    }

    fn to_scene(&self, v: Point3) -> Point3 {
        let d = [v[0] - self.center[0], v[1] - self.center[1], v[2] - self.center[2]];
        let mut out = self.center;
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.rot[0][k] * d[0] + self.rot[1][k] * d[1] + self.rot[2][k] * d[2];
        }
        out
    }

    fn to_view(&self, p: Point3) -> Point3 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let mut out = self.center;
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.rot[k][0] * d[0] + self.rot[k][1] * d[1] + self.rot[k][2] * d[2];
        }
        out
    }

    /// Axis-aligned box in view coordinates enclosing the model's box.
    fn view_box(&self, b: &Aabb3) -> Aabb3 {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for c in 0..8 {
            let corner = [
                if c & 1 == 0 { b.min[0] } else { b.max[0] },
                if c & 2 == 0 { b.min[1] } else { b.max[1] },
                if c & 4 == 0 { b.min[2] } else { b.max[2] },
            ];
            let v = self.to_view(corner);
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Aabb3 { min, max }
    }

    /// Largest view depth in `[lo, hi]` on the line through `(x, y)` where
    /// the model is solid. Uses the convexity of the sublevel sets of `F`.
    fn top_hit(&self, sq: &Superquadric, x: f64, y: f64, lo: f64, hi: f64) -> Option<f64> {
        let f = |z: f64| sq.inside_outside(self.to_scene([x, y, z]));
        // golden-section search for the minimum of the quasi-convex profile
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..80 {
            if fc <= 1.0 || fd <= 1.0 || (b - a) < 1e-9 {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        let inside = if fd <= 1.0 {
            d
        } else if fc <= 1.0 {
            c
        } else {
            return None;
        };
        if f(hi) <= 1.0 {
            return Some(hi);
        }
        let (mut below, mut above) = (inside, hi);
        for _ in 0..100 {
            let mid = 0.5 * (below + above);
            if f(mid) <= 1.0 {
                below = mid;
            } else {
                above = mid;
            }
            if above - below < 1e-10 {
                break;
            }
        }
        Some(below)
    }
}

/// Inclusive pixel index range whose centers fall in `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(u32, u32)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if first > last {
        None
    } else {
        Some((first as u32, last as u32))
    }
}

/// Renders the range image and the instance masks.
pub fn render(scene: &Scene) -> Result<(RangeImage, InstanceMaskImage)> {
    render_with_view(scene, View::TopDown)
}

pub fn render_with_view(scene: &Scene, view: View) -> Result<(RangeImage, InstanceMaskImage)> {
    scene.validate()?;
    let b = scene.bounds;
    let (w, h) = (b.width, b.height);
    let zmax = b.depth as f64;
    let frame = ViewFrame::new(view, b);

    let rows: Vec<(Vec<f32>, Vec<u16>)> = (0..h)
        .into_par_iter()
        .map(|j| {
            let y = j as f64 + 0.5;
            let mut best = vec![f64::NEG_INFINITY; w as usize];
            let mut ids = vec![0u16; w as usize];
            for (k, sq) in scene.superquadrics.iter().enumerate() {
                let bbox = match &frame {
                    None => sq.bounding_box(),
                    Some(f) => f.view_box(&sq.bounding_box()),
                };
                if y < bbox.min[1] || y > bbox.max[1] {
                    continue;
                }
                let Some((i0, i1)) = pixel_span(bbox.min[0], bbox.max[0], w) else {
                    continue;
                };
                for i in i0..=i1 {
                    let x = i as f64 + 0.5;
                    let top = match &frame {
                        None => sq.surface_z_extent(x, y).map(|(_, hi)| hi),
                        Some(f) => {
                            let lo = bbox.min[2].max(0.0);
                            let hi = bbox.max[2].min(zmax);
                            if lo > hi {
                                None
                            } else {
                                f.top_hit(sq, x, y, lo, hi)
                            }
                        }
                    };
                    let Some(z) = top else { continue };
                    let z = z.min(zmax);
                    if z <= 0.0 {
                        continue;
                    }
                    if z > best[i as usize] {
                        best[i as usize] = z;
                        ids[i as usize] = (k + 1) as u16;
                    }
                }
            }
            let depth = best
                .iter()
                .map(|&z| if z.is_finite() { z as f32 } else { 0.0 })
                .collect();
            (depth, ids)
        })
        .collect();

    let mut range = RangeImage::new(w, h);
    let mut masks = InstanceMaskImage::new(w, h);
    for (j, (d, ids)) in rows.into_iter().enumerate() {
        let off = j * w as usize;
        range.depth[off..off + w as usize].copy_from_slice(&d);
        masks.ids[off..off + w as usize].copy_from_slice(&ids);
    }
    Ok((range, masks))
}

/// Verification renderer: marches each pixel from the top of the grid down
/// in `z_step` increments and reports the first sample where any model's
/// inside-outside function is `<= 1`.
///
/// Samples lie on the global grid `depth - k * z_step`. Marching only starts
/// at the first grid sample inside a model's bounding box, which cannot
/// change the answer since `F > 1` everywhere outside the box.
pub fn render_bruteforce(scene: &Scene, z_step: f64) -> Result<RangeImage> {
    render_bruteforce_with_view(scene, z_step, View::TopDown)
}

pub fn render_bruteforce_with_view(scene: &Scene, z_step: f64, view: View) -> Result<RangeImage> {
    if !(z_step > 0.0) || !z_step.is_finite() {
        return Err(Error::InvalidConfig(format!("z_step must be positive, got {z_step}")));
    }
    scene.validate()?;
    let b = scene.bounds;
    let (w, h) = (b.width, b.height);
    let top = b.depth as f64;
    let last_k = (top / z_step).floor() as i64;
    let frame = ViewFrame::new(view, b);
    let boxes: Vec<Aabb3> = scene
        .superquadrics
        .iter()
        .map(|sq| match &frame {
            None => sq.bounding_box(),
            Some(f) => f.view_box(&sq.bounding_box()),
        })
        .collect();

    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|j| {
            let y = j as f64 + 0.5;
            (0..w)
                .map(|i| {
                    let x = i as f64 + 0.5;
                    let mut best_k = i64::MAX;
                    for (sq, bb) in scene.superquadrics.iter().zip(&boxes) {
                        if x < bb.min[0] || x > bb.max[0] || y < bb.min[1] || y > bb.max[1] {
                            continue;
                        }
                        let k_start = ((top - bb.max[2]) / z_step).floor().max(0.0) as i64;
                        let k_end = (((top - bb.min[2]) / z_step).ceil() as i64).min(last_k);
                        let mut k = k_start;
                        while k <= k_end && k < best_k {
                            let z = top - k as f64 * z_step;
                            let p = match &frame {
                                None => [x, y, z],
                                Some(f) => f.to_scene([x, y, z]),
                            };
                            if sq.inside_outside(p) <= 1.0 {
                                best_k = k;
                                break;
                            }
                            k += 1;
                        }
                    }
                    if best_k == i64::MAX {
                        0.0
                    } else {
                        let z = top - best_k as f64 * z_step;
                        if z <= 0.0 {
                            0.0
                        } else {
                            z as f32
                        }
                    }
                })
                .collect()
        })
        .collect();
    RangeImage::from_vec(w, h, rows.concat())
}

/// Fraction of instance `k` (1-based id) that survives occlusion: pixels
/// carrying id `k` over the pixels the instance covers when rendered alone.
pub fn instance_visible_fraction(scene: &Scene, masks: &InstanceMaskImage, k: u16) -> Result<f64> {
    instance_visible_fraction_with_view(scene, masks, k, View::TopDown)
}

pub fn instance_visible_fraction_with_view(
    scene: &Scene,
    masks: &InstanceMaskImage,
    k: u16,
    view: View,
) -> Result<f64> {
    if k == 0 || k as usize > scene.len() {
        return Err(Error::InvalidScene(format!(
            "instance id {k} not in 1..={}",
            scene.len()
        )));
    }
    let alone = Scene {
        superquadrics: vec![scene.superquadrics[k as usize - 1]],
        bounds: scene.bounds,
        seed: scene.seed,
    };
    let (_, solo) = render_with_view(&alone, view)?;
    if solo.width != masks.width || solo.height != masks.height {
        return Err(Error::SizeMismatch("mask raster does not match scene bounds".into()));
    }
    let full = solo.count(1);
    if full == 0 {
        return Ok(0.0);
    }
    Ok((masks.count(k) as f64 / full as f64).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(r: f64, c: Point3) -> Superquadric {
        Superquadric::new([r; 3], [1.0, 1.0], c)
    }

    #[test]
    fn sphere_pole_pixel() {
        let scene = Scene::new(vec![sphere(10.0, [128.0, 128.0, 125.0])], SceneBounds::default());
        let (range, masks) = render(&scene).unwrap();
        // pixel (128, 128) samples (128.5, 128.5): z = 125 + sqrt(100 - 0.5)
        let expected = (125.0 + (100.0f64 - 0.5).sqrt()) as f32;
        assert_eq!(range.get(128, 128), expected);
        assert_eq!(masks.get(128, 128), 1);
        // pixel (127, 127) samples (127.5, 127.5), symmetric
        assert_eq!(range.get(127, 127), expected);
        assert_eq!(range.get(10, 10), 0.0);
        assert_eq!(masks.get(10, 10), 0);
    }

    #[test]
    fn closer_instance_wins() {
        let low = sphere(20.0, [128.0, 128.0, 100.0]);
        let high = sphere(10.0, [128.0, 128.0, 130.0]);
        let scene = Scene::new(vec![low, high], SceneBounds::default());
        let (range, masks) = render(&scene).unwrap();
        assert_eq!(masks.get(128, 128), 2);
        assert!(range.get(128, 128) > 139.0);
        // outside the small sphere the big one shows through
        assert_eq!(masks.get(128 + 15, 128), 1);
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = Scene::new(vec![], SceneBounds::new(16, 8, 32).unwrap());
        let (range, masks) = render(&scene).unwrap();
        assert!(range.depth.iter().all(|&d| d == 0.0));
        assert!(masks.ids.iter().all(|&d| d == 0));
        let bf = render_bruteforce(&scene, 0.05).unwrap();
        assert!(bf.depth.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn bruteforce_matches_single_sphere() {
        let scene = Scene::new(vec![sphere(10.0, [32.0, 32.0, 40.0])], SceneBounds::new(64, 64, 64).unwrap());
        let (range, _) = render(&scene).unwrap();
        let bf = render_bruteforce(&scene, 0.05).unwrap();
        for (a, b) in range.depth.iter().zip(&bf.depth) {
            if *a != 0.0 && *b != 0.0 {
                assert!((a - b).abs() <= 0.05 + 1e-6, "{a} vs {b}");
                assert!(b <= a);
            }
        }
    }

    #[test]
    fn invalid_scene_and_step_rejected() {
        let mut bad = sphere(10.0, [32.0; 3]);
        bad.eps2 = 0.0;
        let scene = Scene::new(vec![bad], SceneBounds::default());
        assert!(render(&scene).is_err());
        let ok = Scene::new(vec![], SceneBounds::default());
        assert!(render_bruteforce(&ok, 0.0).is_err());
    }

    #[test]
    fn visible_fraction_cases() {
        let single = Scene::new(vec![sphere(10.0, [64.0, 64.0, 60.0])], SceneBounds::new(128, 128, 128).unwrap());
        let (_, m) = render(&single).unwrap();
        assert_eq!(instance_visible_fraction(&single, &m, 1).unwrap(), 1.0);

        let hidden = sphere(5.0, [64.0, 64.0, 50.0]);
        let cover = Superquadric::new([20.0, 20.0, 10.0], [0.1, 0.1], [64.0, 64.0, 70.0]);
        let s = Scene::new(vec![hidden, cover], SceneBounds::new(128, 128, 128).unwrap());
        let (_, m) = render(&s).unwrap();
        assert_eq!(instance_visible_fraction(&s, &m, 1).unwrap(), 0.0);

        // a box covering the half-plane x < 64 above a sphere centered at 64
        let target = sphere(15.0, [64.0, 64.0, 50.0]);
        let half = Superquadric::new([20.0, 30.0, 5.0], [0.01, 0.01], [44.0, 64.0, 90.0]);
        let s = Scene::new(vec![target, half], SceneBounds::new(128, 128, 128).unwrap());
        let (_, m) = render(&s).unwrap();
        let v = instance_visible_fraction(&s, &m, 1).unwrap();
        assert!(v > 0.4 && v < 0.6, "{v}");
        assert!(instance_visible_fraction(&s, &m, 3).is_err());
    }

    #[test]
    fn axonometric_view_agrees_with_its_oracle() {
        let b = SceneBounds::new(96, 96, 96).unwrap();
        let scene = Scene::new(
            vec![Superquadric::new([12.0, 8.0, 10.0], [0.3, 0.6], [48.0, 48.0, 48.0])],
            b,
        );
        let (range, masks) = render_with_view(&scene, View::Axonometric).unwrap();
        let bf = render_bruteforce_with_view(&scene, 0.05, View::Axonometric).unwrap();
        assert!(range.foreground_count() > 100);
        let mut compared = 0;
        for j in 1..95u32 {
            for i in 1..95u32 {
                let id = masks.get(i, j);
                let interior = (-1i32..=1).all(|dj| {
                    (-1i32..=1).all(|di| masks.get((i as i32 + di) as u32, (j as i32 + dj) as u32) == id)
                });
                if id == 0 || !interior {
                    continue;
                }
                let (a, c) = (range.get(i, j), bf.get(i, j));
                assert!((a - c).abs() <= 0.06, "({i},{j}) {a} vs {c}");
                compared += 1;
            }
        }
        assert!(compared > 50);
        // the top-down image of the same box differs: side faces show up
        let (td, _) = render(&scene).unwrap();
        assert_ne!(td.foreground_count(), range.foreground_count());
    }
}
