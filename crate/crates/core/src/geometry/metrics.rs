//! Chamfer distance and F-score.

use crate::error::{contract, Result};
use crate::{PointCloud, Scalar};

/// F-score threshold, compared against squared nearest-neighbor distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    pub tau: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { tau: 1e-3 }
    }
}

impl MetricConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(contract(format!("F-score threshold must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// For each point of `from` (flat xyz), the index of its nearest point in `to`
/// and the squared distance to it. Ties go to the lowest index.
pub fn nearest_neighbors<T: Scalar>(from: &[T], to: &[T]) -> (Vec<usize>, Vec<T>) {
    let n = from.len() / 3;
    let mut idx = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    for p in from.chunks_exact(3) {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (j, q) in to.chunks_exact(3).enumerate() {
            let d = sq_dist(p, q);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        idx.push(best);
        dist.push(best_d);
    }
    (idx, dist)
}

pub(crate) struct ChamferParts<T> {
    pub value: T,
    pub nn_ab: Vec<usize>,
    pub nn_ba: Vec<usize>,
}

fn directed_term<T: Scalar>(sq: &[T]) -> T {
    let sum = sq.iter().fold(T::zero(), |acc, &d| acc + d.sqrt());
    sum / (T::of(2.0) * T::from_usize(sq.len()).unwrap())
}

pub(crate) fn chamfer_parts<T: Scalar>(a: &[T], b: &[T]) -> ChamferParts<T> {
    let (nn_ab, d_ab) = nearest_neighbors(a, b);
    let (nn_ba, d_ba) = nearest_neighbors(b, a);
    ChamferParts {
        value: directed_term(&d_ab) + directed_term(&d_ba),
        nn_ab,
        nn_ba,
    }
}

/// L1 Chamfer distance:
/// `1/(2|P|)·Σ_p min_q ‖p−q‖ + 1/(2|Q|)·Σ_q min_p ‖q−p‖`.
pub fn chamfer_l1<T: Scalar>(p: &PointCloud<T>, q: &PointCloud<T>) -> Result<T> {
    if p.is_empty() || q.is_empty() {
        return Err(contract("chamfer_l1 requires non-empty clouds"));
    }
    Ok(chamfer_parts(p.flat(), q.flat()).value)
}

/// F-score on a 0–100 scale: harmonic mean of the percentage of `pred`
/// points within `tau` (squared distance) of `gt` and vice versa.
pub fn fscore<T: Scalar>(pred: &PointCloud<T>, gt: &PointCloud<T>, cfg: MetricConfig) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(contract("fscore requires non-empty clouds"));
    }
    let tau = cfg.tau;
    let pct = |from: &PointCloud<T>, to: &PointCloud<T>| {
        let (_, d) = nearest_neighbors(from.flat(), to.flat());
        let hits = d.iter().filter(|v| v.to_f64c() < tau).count();
        100.0 * hits as f64 / from.len() as f64
    };
    let precision = pct(pred, gt);
    let recall = pct(gt, pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_fixtures() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_l1(&a, &b).unwrap(), 1.0);
        let two = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_l1(&two, &a).unwrap(), 0.25);
        assert_eq!(chamfer_l1(&a, &two).unwrap(), 0.25);
    }

    #[test]
    fn nearest_ties_pick_lowest_index() {
        let to = [1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        let (idx, d) = nearest_neighbors(&[0.0, 0.0, 0.0], &to);
        assert_eq!(idx, [0]);
        assert_eq!(d, [1.0]);
    }

    #[test]
    fn fscore_examples() {
        let cfg = MetricConfig::default();
        let g = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(fscore(&g, &g, cfg).unwrap(), 100.0);
        let far = cloud(&[[10.0, 0.0, 0.0], [11.0, 0.0, 0.0]]);
        assert_eq!(fscore(&far, &g, cfg).unwrap(), 0.0);
        // Half of P is near G (precision 50), every G point has a P neighbour
        // (recall 100).
        let p = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0], [6.0, 0.0, 0.0]]);
        let f = fscore(&p, &g, cfg).unwrap();
        assert!((f - 2.0 * 50.0 * 100.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn tau_must_be_positive() {
        assert!(MetricConfig::new(0.0).is_err());
        assert!(MetricConfig::new(f64::NAN).is_err());
    }
}
