//! Per-parameter error statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{box_stats, BoxStats};
use crate::error::{Error, Result};
use crate::geometry::Superquadric;

/// Index of the shape exponents in the `[a1, a2, a3, eps1, eps2, x0, y0, z0]`
/// ordering.
const SHAPE_PARAMS: [usize; 2] = [3, 4];

/// A predicted model matched to its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPair {
    pub pred: Superquadric,
    pub truth: Superquadric,
    /// Superquadric count of the scene the pair comes from.
    pub scene_count: usize,
}

impl ParamPair {
    pub fn abs_errors(&self) -> [f64; 8] {
        let (p, t) = (self.pred.to_array(), self.truth.to_array());
        std::array::from_fn(|k| (p[k] - t[k]).abs())
    }

    /// `(pred - truth) / truth` for sizes and positions and the plain
    /// difference for the shape exponents, whose ratios blow up near 0.01.
    pub fn relative_errors(&self) -> [f64; 8] {
        let (p, t) = (self.pred.to_array(), self.truth.to_array());
        std::array::from_fn(|k| {
            if SHAPE_PARAMS.contains(&k) {
                p[k] - t[k]
            } else {
                (p[k] - t[k]) / t[k]
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub n: usize,
    /// MAE ordered `[a1, a2, a3, eps1, eps2, x0, y0, z0]`.
    pub mae: [f64; 8],
    pub relative: Vec<Option<BoxStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamErrorReport {
    pub all: ParamRow,
    pub by_count: BTreeMap<usize, ParamRow>,
}

fn row(pairs: &[&ParamPair]) -> ParamRow {
    let n = pairs.len();
    let mut sum = [0.0; 8];
    let mut rel: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 8];
    for p in pairs {
        for (k, e) in p.abs_errors().iter().enumerate() {
            sum[k] += e;
        }
        for (k, e) in p.relative_errors().iter().enumerate() {
            rel[k].push(*e);
        }
    }
    ParamRow {
        n,
        mae: sum.map(|s| s / n as f64),
        relative: rel.iter().map(|v| box_stats(v)).collect(),
    }
}

impl ParamErrorReport {
    pub fn from_pairs(pairs: &[ParamPair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyMatching);
        }
        let refs: Vec<&ParamPair> = pairs.iter().collect();
        let mut groups: BTreeMap<usize, Vec<&ParamPair>> = BTreeMap::new();
        for p in pairs {
            groups.entry(p.scene_count).or_default().push(p);
        }
        Ok(Self {
            all: row(&refs),
            by_count: groups.into_iter().map(|(k, v)| (k, row(&v))).collect(),
        })
    }
}

/// MAE of the matched `(pred index, truth index)` pairs. The truth list is
/// taken to be one scene, so its length labels the breakdown row.
pub fn param_mae(
    pred: &[Superquadric],
    truth: &[Superquadric],
    matching: &[(usize, usize)],
) -> Result<ParamErrorReport> {
    let pairs = matching
        .iter()
        .map(|&(p, t)| match (pred.get(p), truth.get(t)) {
            (Some(ps), Some(ts)) => Ok(ParamPair { pred: *ps, truth: *ts, scene_count: truth.len() }),
            _ => Err(Error::InvalidConfig(format!("matching pair ({p}, {t}) out of range"))),
        })
        .collect::<Result<Vec<_>>>()?;
    ParamErrorReport::from_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(v: f64) -> Superquadric {
        Superquadric::new([30.0 + v; 3], [0.5, 0.6], [100.0 + v, 110.0, 120.0])
    }

    #[test]
    fn exact_predictions_have_zero_error() {
        let t = vec![sq(0.0), sq(5.0)];
        let r = param_mae(&t, &t, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(r.all.mae, [0.0; 8]);
        assert_eq!(r.all.n, 2);
    }

    #[test]
    fn unit_offsets() {
        let t = sq(0.0);
        let mut p = t.to_array();
        for (k, v) in p.iter_mut().enumerate() {
            *v += if k == 3 || k == 4 { 0.01 } else { 1.0 };
        }
        let r = param_mae(&[Superquadric::from_array(p)], &[t], &[(0, 0)]).unwrap();
        for k in 0..8 {
            let want = if k == 3 || k == 4 { 0.01 } else { 1.0 };
            assert!((r.all.mae[k] - want).abs() < 1e-12, "{k}: {}", r.all.mae[k]);
        }
        let rel = r.all.relative[0].unwrap();
        assert!((rel.median - 1.0 / 30.0).abs() < 1e-12);
        assert!((r.all.relative[3].unwrap().median - 0.01).abs() < 1e-12);
    }

    #[test]
    fn empty_and_out_of_range_matching() {
        assert!(matches!(param_mae(&[], &[], &[]), Err(Error::EmptyMatching)));
        assert!(param_mae(&[sq(0.0)], &[sq(0.0)], &[(0, 1)]).is_err());
    }
}
