//! Superquadric recovery from segmented range data.
//!
//! The fitter minimizes `sum_i r_i^2` with the radial-corrected residual
//! `r_i = sqrt(a1 a2 a3) * (F(p_i)^(eps1/2) - 1)` using Levenberg-Marquardt
//! with a central-difference Jacobian. Shape exponents and sizes are
//! projected back onto their admissible ranges after every step.

use std::time::Instant;

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Superquadric};
use crate::render::{InstanceMaskImage, RangeImage};
use crate::sample::{crop_instance, mix_seed};

const NPARAM: usize = Superquadric::PARAM_COUNT;

type Vec8 = SVector<f64, NPARAM>;
type Mat8 = SMatrix<f64, NPARAM, NPARAM>;

/// Fewest points a fit accepts, one per parameter.
pub const MIN_POINTS: usize = NPARAM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    /// Stop when the accepted step is shorter than this, relative to the
    /// parameter norm.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub min_size: f64,
    /// Clouds larger than this are uniformly subsampled.
    pub max_points: usize,
    /// Base seed for subsampling; each instance derives its own stream.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-8,
            step_tolerance: 1e-8,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            eps_min: crate::geometry::EPS_MIN,
            eps_max: crate::geometry::EPS_MAX,
            min_size: 1e-3,
            max_points: 20_000,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cost_tolerance", self.cost_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("initial_damping", self.initial_damping),
            ("damping_up", self.damping_up),
            ("damping_down", self.damping_down),
            ("min_size", self.min_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.max_points < MIN_POINTS {
            return Err(Error::InvalidConfig("max_iterations and max_points must be positive".into()));
        }
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps_max && self.eps_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "eps clamp range [{}, {}] must lie in (0, 1]",
                self.eps_min, self.eps_max
            )));
        }
        Ok(())
    }

    fn project(&self, p: &mut Vec8) {
        for k in 0..3 {
            p[k] = p[k].max(self.min_size);
        }
        for k in 3..5 {
            p[k] = p[k].clamp(self.eps_min, self.eps_max);
        }
        // keep the solid above the floor at depth 0, holding its top fixed;
        // otherwise a3 can run off towards a flat slab deep below the scene
        let top = p[7] + p[2];
        if p[2] > p[7] && top > 2.0 * self.min_size {
            p[2] = 0.5 * top;
            p[7] = 0.5 * top;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Superquadric,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds spent inside the fitter.
    pub wall_time: f64,
    pub point_count: usize,
}

/// Lifts every foreground pixel `(i, j)` to the point `(i + 0.5, j + 0.5, depth)`.
pub fn depth_to_points(crop: &RangeImage) -> Result<Vec<Point3>> {
    let w = crop.width as usize;
    let pts: Vec<Point3> = crop
        .depth
        .iter()
        .enumerate()
        .filter(|(_, &d)| d != 0.0)
        .map(|(idx, &d)| [(idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5, d as f64])
        .collect();
    if pts.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    Ok(pts)
}

/// Bounding-extent initial guess. Only the top of the object is seen, so
/// `a3` falls back to half the smaller footprint side and `z0` sits `a3`
/// below the highest point.
pub fn initialize_fit(points: &[Point3]) -> Result<Superquadric> {
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_POINTS, got: points.len() });
    }
    let n = points.len() as f64;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut sum = [0.0; 2];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        sum[0] += p[0];
        sum[1] += p[1];
    }
    let a1 = (0.5 * (hi[0] - lo[0])).max(1.0);
    let a2 = (0.5 * (hi[1] - lo[1])).max(1.0);
    let a3 = (0.5 * (hi[0] - lo[0]).min(hi[1] - lo[1])).max(1.0);
    Ok(Superquadric {
        a1,
        a2,
        a3,
        eps1: 1.0,
        eps2: 1.0,
        x0: sum[0] / n,
        y0: sum[1] / n,
        z0: hi[2] - a3,
    })
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `F(p)^(eps1/2)` evaluated in the log domain so that the large exponents
/// never overflow.
#[inline]
pub fn radial_ratio(sq: &Superquadric, p: &Point3) -> f64 {
    let lx = ((p[0] - sq.x0).abs() / sq.a1).ln();
    let ly = ((p[1] - sq.y0).abs() / sq.a2).ln();
    let lz = ((p[2] - sq.z0).abs() / sq.a3).ln();
    let q2 = 2.0 / sq.eps2;
    let ls = log_add_exp(q2 * lx, q2 * ly);
    let lf = log_add_exp(sq.eps2 / sq.eps1 * ls, 2.0 / sq.eps1 * lz);
    (0.5 * sq.eps1 * lf).exp()
}

#[inline]
fn residual(sq: &Superquadric, scale: f64, p: &Point3) -> f64 {
    scale * (radial_ratio(sq, p) - 1.0)
}

fn residuals_into(params: &Vec8, points: &[Point3], out: &mut [f64]) {
    let sq = Superquadric::from_array(params.as_slice().try_into().unwrap());
    let scale = (sq.a1 * sq.a2 * sq.a3).sqrt();
    for (o, p) in out.iter_mut().zip(points) {
        *o = residual(&sq, scale, p);
    }
}

/// Sum of squared residuals of `sq` over `points`.
pub fn fit_cost(sq: &Superquadric, points: &[Point3]) -> f64 {
    let scale = (sq.a1 * sq.a2 * sq.a3).sqrt();
    points.iter().map(|p| residual(sq, scale, p).powi(2)).sum()
}

/// Finite-difference step for parameter value `v`.
#[inline]
pub fn fd_step(v: f64) -> f64 {
    (1e-6 * v.abs()).max(1e-8)
}

/// Central-difference Jacobian columns, `work[k][i] = d r_i / d p_k`.
fn fd_columns(params: &Vec8, points: &[Point3], work: &mut [Vec<f64>]) {
    let mut plus = vec![0.0; points.len()];
    for k in 0..NPARAM {
        let h = fd_step(params[k]);
        let mut pp = *params;
        pp[k] += h;
        residuals_into(&pp, points, &mut plus);
        let mut pm = *params;
        pm[k] -= h;
        let col = &mut work[k];
        residuals_into(&pm, points, col);
        let inv = 1.0 / (2.0 * h);
        for (c, p) in col.iter_mut().zip(&plus) {
            *c = (p - *c) * inv;
        }
    }
}

/// Accumulates `J^T J` and `J^T r` from the Jacobian columns.
fn normal_equations(params: &Vec8, points: &[Point3], r: &[f64], work: &mut [Vec<f64>]) -> (Mat8, Vec8) {
    fd_columns(params, points, work);
    let mut jtj = Mat8::zeros();
    let mut jtr = Vec8::zeros();
    for a in 0..NPARAM {
        jtr[a] = work[a].iter().zip(r).map(|(j, r)| j * r).sum();
        for b in a..NPARAM {
            let v: f64 = work[a].iter().zip(&work[b]).map(|(x, y)| x * y).sum();
            jtj[(a, b)] = v;
            jtj[(b, a)] = v;
        }
    }
    (jtj, jtr)
}

/// Residuals `sqrt(a1 a2 a3) (F^(eps1/2) - 1)` of every point.
pub fn residuals(sq: &Superquadric, points: &[Point3]) -> Vec<f64> {
    let mut out = vec![0.0; points.len()];
    residuals_into(&Vec8::from(sq.to_array()), points, &mut out);
    out
}

/// The finite-difference Jacobian the solver uses, one row per point.
pub fn jacobian(sq: &Superquadric, points: &[Point3]) -> Vec<[f64; 8]> {
    let mut work = vec![vec![0.0; points.len()]; NPARAM];
    fd_columns(&Vec8::from(sq.to_array()), points, &mut work);
    (0..points.len()).map(|i| std::array::from_fn(|k| work[k][i])).collect()
}

/// Uniformly subsamples `points` down to `limit` entries, keeping order.
pub fn subsample(points: &[Point3], limit: usize, seed: u64) -> Vec<Point3> {
    if points.len() <= limit {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, points.len(), limit).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Levenberg-Marquardt recovery of one superquadric.
pub fn fit_superquadric(points: &[Point3], cfg: &FitConfig, init: Option<Superquadric>) -> Result<FitResult> {
    fit_with_trace(points, cfg, init, |_| {})
}

/// Same as [`fit_superquadric`], reporting the cost after the initial
/// estimate and after every accepted step.
pub fn fit_with_trace(
    points: &[Point3],
    cfg: &FitConfig,
    init: Option<Superquadric>,
    mut on_cost: impl FnMut(f64),
) -> Result<FitResult> {
    let start = Instant::now();
    cfg.validate()?;
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints { needed: MIN_POINTS, got: points.len() });
    }
    let sampled;
    let points = if points.len() > cfg.max_points {
        sampled = subsample(points, cfg.max_points, cfg.seed);
        &sampled[..]
    } else {
        points
    };
    let init = match init {
        Some(sq) => sq,
        None => initialize_fit(points)?,
    };
    let mut params = Vec8::from_column_slice(&init.to_array());
    cfg.project(&mut params);

    let m = points.len();
    let mut r = vec![0.0; m];
    let mut trial_r = vec![0.0; m];
    let mut work = vec![vec![0.0; m]; NPARAM];
    residuals_into(&params, points, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let initial_cost = cost;
    on_cost(cost);

    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations && !converged {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(&params, points, &r, &mut work);
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;
        let mut accepted = false;
        // retry with growing damping until the step lowers the cost
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..NPARAM {
                a[(k, k)] += lambda * jtj[(k, k)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= cfg.damping_up;
                continue;
            };
            let step = chol.solve(&(-jtr));
            let mut trial = params + step;
            cfg.project(&mut trial);
            residuals_into(&trial, points, &mut trial_r);
            let trial_cost: f64 = trial_r.iter().map(|v| v * v).sum();
            if trial_cost.is_finite() && trial_cost < cost {
                let moved = (trial - params).norm();
                let drop = (cost - trial_cost) / cost;
                params = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                on_cost(cost);
                lambda = (lambda * cfg.damping_down).max(1e-12);
                accepted = true;
                if drop < cfg.cost_tolerance
                    || moved < cfg.step_tolerance * (params.norm() + cfg.step_tolerance)
                {
                    converged = true;
                }
                break;
            }
            lambda *= cfg.damping_up;
        }
        if !accepted {
            // no descent direction left at any damping
            converged = true;
        }
    }

    Ok(FitResult {
        params: Superquadric::from_array(params.as_slice().try_into().unwrap()),
        initial_cost,
        cost,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        point_count: m,
    })
}

/// Outcome for one instance id of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum InstanceRecovery {
    Fitted { id: u16, result: FitResult },
    Skipped { id: u16, visible_pixels: usize, reason: String },
}

impl InstanceRecovery {
    pub fn id(&self) -> u16 {
        match self {
            InstanceRecovery::Fitted { id, .. } | InstanceRecovery::Skipped { id, .. } => *id,
        }
    }

    pub fn fit(&self) -> Option<&FitResult> {
        match self {
            InstanceRecovery::Fitted { result, .. } => Some(result),
            InstanceRecovery::Skipped { .. } => None,
        }
    }
}

/// Fits every instance id present in `masks`, in ascending id order.
///
/// Instances may be fitted concurrently; each draws its subsampling stream
/// from `(cfg.seed, id)` so the output does not depend on scheduling.
pub fn recover_scene(range: &RangeImage, masks: &InstanceMaskImage, cfg: &FitConfig) -> Result<Vec<InstanceRecovery>> {
    cfg.validate()?;
    if !range.same_size(masks.width, masks.height) {
        return Err(Error::SizeMismatch(format!(
            "range {}x{} vs masks {}x{}",
            range.width, range.height, masks.width, masks.height
        )));
    }
    let ids = masks.present_ids();
    ids.par_iter()
        .map(|&id| recover_instance(range, masks, cfg, id))
        .collect()
}

fn recover_instance(range: &RangeImage, masks: &InstanceMaskImage, cfg: &FitConfig, id: u16) -> Result<InstanceRecovery> {
    let points = match crop_instance(range, masks, id) {
        Ok(crop) => depth_to_points(&crop)?,
        Err(Error::EmptySegment(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    if points.len() < MIN_POINTS {
        return Ok(InstanceRecovery::Skipped {
            id,
            visible_pixels: points.len(),
            reason: format!("only {} visible pixels, need {MIN_POINTS}", points.len()),
        });
    }
    let local = FitConfig { seed: mix_seed(cfg.seed, id as u64), ..cfg.clone() };
    match fit_superquadric(&points, &local, None) {
        Ok(result) => Ok(InstanceRecovery::Fitted { id, result }),
        Err(Error::NonFiniteCost) => Ok(InstanceRecovery::Skipped {
            id,
            visible_pixels: points.len(),
            reason: "non-finite cost at initialization".into(),
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SceneBounds;
    use crate::render::{render, Scene};

    fn sphere_scene() -> Scene {
        Scene::new(
            vec![Superquadric::new([10.0; 3], [1.0, 1.0], [128.0, 128.0, 125.0])],
            SceneBounds::default(),
        )
    }

    #[test]
    fn one_pixel_crop() {
        let mut crop = RangeImage::new(4, 3);
        crop.depth[2 * 4 + 1] = 7.5;
        let pts = depth_to_points(&crop).unwrap();
        assert_eq!(pts, vec![[1.5, 2.5, 7.5]]);
        assert!(depth_to_points(&RangeImage::new(4, 3)).is_err());
    }

    #[test]
    fn lifted_sphere_points_lie_on_surface() {
        let scene = sphere_scene();
        let (range, _) = render(&scene).unwrap();
        let pts = depth_to_points(&range).unwrap();
        assert_eq!(pts.len(), range.foreground_count());
        let sq = scene.superquadrics[0];
        for p in &pts {
            // depth is stored as f32
            let (_, hi) = sq.surface_z_extent(p[0], p[1]).unwrap();
            assert!((p[2] - hi).abs() < 1e-4);
            assert!((sq.inside_outside(*p) - 1.0).abs() < 1e-3 || hi - sq.z0 < 0.5);
        }
    }

    #[test]
    fn sphere_initialization() {
        let (range, _) = render(&sphere_scene()).unwrap();
        let pts = depth_to_points(&range).unwrap();
        let init = initialize_fit(&pts).unwrap();
        assert!((init.x0 - 128.0).abs() <= 1.0 && (init.y0 - 128.0).abs() <= 1.0);
        assert!((init.a1 - 10.0).abs() <= 1.0 && (init.a2 - 10.0).abs() <= 1.0);
        let top = pts.iter().map(|p| p[2]).fold(f64::MIN, f64::max);
        assert!((init.z0 - (top - init.a3)).abs() < 1e-12);
        assert!((init.z0 - (135.0 - init.a3)).abs() <= 1.0);
    }

    #[test]
    fn coincident_points_clamp() {
        let pts = vec![[5.0, 5.0, 5.0]; 8];
        let init = initialize_fit(&pts).unwrap();
        assert_eq!((init.a1, init.a2, init.a3), (1.0, 1.0, 1.0));
        assert!(init.is_valid());
        assert!(matches!(initialize_fit(&pts[..7]), Err(Error::TooFewPoints { .. })));
        assert!(fit_superquadric(&pts[..7], &FitConfig::default(), None).is_err());
    }

    #[test]
    fn projection_keeps_solid_above_floor() {
        let cfg = FitConfig::default();
        let mut p = Vec8::from_column_slice(&[30.0, 30.0, 500.0, 0.5, 0.5, 100.0, 100.0, -360.0]);
        cfg.project(&mut p);
        assert_eq!((p[2], p[7]), (70.0, 70.0));
        let mut q = Vec8::from_column_slice(&[30.0, 30.0, 40.0, 0.5, 0.5, 100.0, 100.0, 120.0]);
        let before = q;
        cfg.project(&mut q);
        assert_eq!(q, before);
    }

    #[test]
    fn radial_ratio_matches_direct_formula() {
        let sq = Superquadric::new([10.0, 20.0, 30.0], [0.3, 0.7], [50.0, 60.0, 70.0]);
        for p in [[55.0, 61.0, 80.0], [50.0, 60.0, 70.0], [70.0, 90.0, 10.0], [50.0, 75.0, 70.0]] {
            let direct = sq.inside_outside(p).powf(sq.eps1 / 2.0);
            let logd = radial_ratio(&sq, &p);
            assert!((direct - logd).abs() <= 1e-12 * direct.max(1.0), "{direct} {logd}");
        }
    }

    #[test]
    fn perfect_init_stays_put() {
        let (range, _) = render(&sphere_scene()).unwrap();
        let pts = depth_to_points(&range).unwrap();
        let truth = sphere_scene().superquadrics[0];
        let res = fit_superquadric(&pts, &FitConfig::default(), Some(truth)).unwrap();
        for (a, b) in res.params.to_array().iter().zip(truth.to_array()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
        assert!(res.cost <= res.initial_cost);
    }

    #[test]
    fn accepted_costs_never_increase() {
        let sq = Superquadric::new([30.0, 40.0, 35.0], [0.4, 0.8], [128.0, 120.0, 130.0]);
        let (range, _) = render(&Scene::new(vec![sq], SceneBounds::default())).unwrap();
        let pts = depth_to_points(&range).unwrap();
        let mut trace = Vec::new();
        let res = fit_with_trace(&pts, &FitConfig::default(), None, |c| trace.push(c)).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.iterations <= FitConfig::default().max_iterations);
        assert!(res.params.is_valid());
    }

    #[test]
    fn subsampling_is_deterministic() {
        let pts: Vec<Point3> = (0..100).map(|i| [i as f64, 0.0, 0.0]).collect();
        let a = subsample(&pts, 10, 3);
        assert_eq!(a, subsample(&pts, 10, 3));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0][0] < w[1][0]));
        assert_eq!(subsample(&pts, 200, 3), pts);
    }
}
