//! Analytic geometry of axis-aligned superquadrics.
//!
//! A superquadric here is the closed surface
//!
//! ```text
//! ((|x-x0|/a1)^(2/e2) + (|y-y0|/a2)^(2/e2))^(e2/e1) + (|z-z0|/a3)^(2/e1) = 1
//! ```
//!
//! with no rotation. The left-hand side is the inside-outside function `F`:
//! `F < 1` inside, `F = 1` on the surface and `F > 1` outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest shape exponent accepted for sampled and rendered models.
pub const EPS_MIN: f64 = 0.01;
/// Largest shape exponent (convex shapes only).
pub const EPS_MAX: f64 = 1.0;

/// Bases below this magnitude are treated as zero before raising them to
/// the (possibly very large) power `2/eps`.
const TINY_BASE: f64 = 1e-12;

pub type Point3 = [f64; 3];

/// Eight-parameter unrotated superquadric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superquadric {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
}

impl Superquadric {
    pub const PARAM_COUNT: usize = 8;
    pub const PARAM_NAMES: [&'static str; 8] = ["a1", "a2", "a3", "eps1", "eps2", "x0", "y0", "z0"];

    pub fn new(size: [f64; 3], shape: [f64; 2], center: Point3) -> Self {
        Self {
            a1: size[0],
            a2: size[1],
            a3: size[2],
            eps1: shape[0],
            eps2: shape[1],
            x0: center[0],
            y0: center[1],
            z0: center[2],
        }
    }

    /// Parameters ordered `[a1, a2, a3, eps1, eps2, x0, y0, z0]`.
    pub fn to_array(&self) -> [f64; 8] {
        [self.a1, self.a2, self.a3, self.eps1, self.eps2, self.x0, self.y0, self.z0]
    }

    pub fn from_array(p: [f64; 8]) -> Self {
        Self {
            a1: p[0],
            a2: p[1],
            a3: p[2],
            eps1: p[3],
            eps2: p[4],
            x0: p[5],
            y0: p[6],
            z0: p[7],
        }
    }

    pub fn center(&self) -> Point3 {
        [self.x0, self.y0, self.z0]
    }

    /// Checks the model invariants: positive finite sizes, finite center
    /// and shape exponents inside `[EPS_MIN, EPS_MAX]`.
    pub fn validate(&self) -> Result<()> {
        let p = self.to_array();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSuperquadric("non-finite parameter".into()));
        }
        if self.a1 <= 0.0 || self.a2 <= 0.0 || self.a3 <= 0.0 {
            return Err(Error::InvalidSuperquadric(format!(
                "sizes must be positive, got ({}, {}, {})",
                self.a1, self.a2, self.a3
            )));
        }
        for (name, e) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(EPS_MIN..=EPS_MAX).contains(&e) {
                return Err(Error::InvalidSuperquadric(format!(
                    "{name} = {e} outside [{EPS_MIN}, {EPS_MAX}]"
                )));
            }
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Inside-outside function `F(p)`.
    pub fn inside_outside(&self, p: Point3) -> f64 {
        let g = self.xy_term(p[0], p[1]);
        g + abs_pow((p[2] - self.z0) / self.a3, 2.0 / self.eps1)
    }

    /// The xy part of `F`, `((|x-x0|/a1)^(2/e2) + (|y-y0|/a2)^(2/e2))^(e2/e1)`.
    pub fn xy_term(&self, x: f64, y: f64) -> f64 {
        let q = 2.0 / self.eps2;
        let s = abs_pow((x - self.x0) / self.a1, q) + abs_pow((y - self.y0) / self.a2, q);
        if s == 0.0 {
            0.0
        } else {
            s.powf(self.eps2 / self.eps1)
        }
    }

    /// Closed-form intersection of the vertical line through `(x, y)` with
    /// the solid. Returns `(z_low, z_high)` or `None` when the line misses.
    pub fn surface_z_extent(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let g = self.xy_term(x, y);
        if g > 1.0 {
            return None;
        }
        if g == 1.0 {
            return Some((self.z0, self.z0));
        }
        let half = self.a3 * (1.0 - g).powf(self.eps1 / 2.0);
        Some((self.z0 - half, self.z0 + half))
    }

    pub fn bounding_box(&self) -> Aabb3 {
        Aabb3 {
            min: [self.x0 - self.a1, self.y0 - self.a2, self.z0 - self.a3],
            max: [self.x0 + self.a1, self.y0 + self.a2, self.z0 + self.a3],
        }
    }

    /// Surface point for the angular parameters `eta ∈ [-π/2, π/2]`
    /// (latitude) and `omega ∈ [-π, π)` (longitude).
    pub fn surface_point(&self, eta: f64, omega: f64) -> Point3 {
        let ce = signed_pow(eta.cos(), self.eps1);
        let se = signed_pow(eta.sin(), self.eps1);
        let cw = signed_pow(omega.cos(), self.eps2);
        let sw = signed_pow(omega.sin(), self.eps2);
        [
            self.x0 + self.a1 * ce * cw,
            self.y0 + self.a2 * ce * sw,
            self.z0 + self.a3 * se,
        ]
    }

    pub fn volume_bbox(&self) -> f64 {
        8.0 * self.a1 * self.a2 * self.a3
    }
}

/// `|t|^q` with tiny bases flushed to zero.
#[inline]
pub fn abs_pow(t: f64, q: f64) -> f64 {
    let t = t.abs();
    if t < TINY_BASE {
        0.0
    } else {
        t.powf(q)
    }
}

#[inline]
fn signed_pow(t: f64, q: f64) -> f64 {
    t.signum() * t.abs().powf(q)
}

/// Axis-aligned box in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb3 {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(Error::InvalidBox { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.max[i] - self.min[i]).product()
    }

    pub fn contains(&self, p: Point3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn intersection_volume(&self, other: &Aabb3) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    /// Volume intersection-over-union. Two degenerate (zero volume) boxes
    /// count as identical when equal and disjoint otherwise.
    pub fn iou(&self, other: &Aabb3) -> f64 {
        let inter = self.intersection_volume(other);
        let union = self.volume() + other.volume() - inter;
        if union <= 0.0 {
            return if self == other { 1.0 } else { 0.0 };
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn aabb_iou(a: &Aabb3, b: &Aabb3) -> f64 {
    a.iou(b)
}

/// Extent of the voxel grid the scene lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub width: u32,
    pub height: u32,
    pub depth: u32,
}

impl Default for SceneBounds {
    fn default() -> Self {
        Self { width: 256, height: 256, depth: 256 }
    }
}

impl SceneBounds {
    pub fn new(width: u32, height: u32, depth: u32) -> Result<Self> {
        let b = Self { width, height, depth };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(Error::InvalidBounds(*self));
        }
        Ok(())
    }

    pub fn as_box(&self) -> Aabb3 {
        Aabb3 {
            min: [0.0; 3],
            max: [self.width as f64, self.height as f64, self.depth as f64],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
