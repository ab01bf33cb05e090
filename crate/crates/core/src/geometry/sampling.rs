//! Farthest point sampling, exact KNN and patch construction.

use crate::error::{contract, Result};
use crate::geometry::metrics::sq_dist;
use crate::{PointCloud, Scalar};

/// Greedy farthest point sampling starting at `start`. Each next pick
/// maximizes the squared distance to the nearest already-picked point; ties go
/// to the lowest index.
pub fn fps<T: Scalar>(cloud: &PointCloud<T>, s: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if s == 0 || s > n {
        return Err(contract(format!("fps: cannot pick {s} centers from {n} points")));
    }
    if start >= n {
        return Err(contract(format!(
            "fps: start index {start} out of range for {n} points"
        )));
    }
    let pts = cloud.flat();
    let mut picks = Vec::with_capacity(s);
    let mut min_d = vec![T::infinity(); n];
    let mut taken = vec![false; n];
    let mut current = start;
    for _ in 0..s {
        picks.push(current);
        taken[current] = true;
        let c = &pts[current * 3..current * 3 + 3];
        let mut best = usize::MAX;
        let mut best_d = T::neg_infinity();
        for (i, p) in pts.chunks_exact(3).enumerate() {
            let d = sq_dist(p, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(picks)
}

/// Indices of the `k` nearest points to `query`, by ascending distance with
/// ties ordered by index.
pub fn knn<T: Scalar>(cloud: &PointCloud<T>, query: [T; 3], k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(contract(format!("knn: k = {k} invalid for {n} points")));
    }
    let mut order: Vec<(T, usize)> = cloud
        .flat()
        .chunks_exact(3)
        .enumerate()
        .map(|(i, p)| (sq_dist(p, &query), i))
        .collect();
    let by_dist = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    if k < n {
        order.select_nth_unstable_by(k - 1, by_dist);
        order.truncate(k);
    }
    order.sort_unstable_by(by_dist);
    Ok(order.into_iter().map(|(_, i)| i).collect())
}

/// `s` patches of `k` points each: FPS centers and their KNN groups, the
/// group coordinates stored relative to their center.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet<T> {
    pub s: usize,
    pub k: usize,
    pub center_indices: Vec<usize>,
    pub centers: Vec<[T; 3]>,
    /// `s·k` neighbor indices, patch-major.
    pub neighbor_indices: Vec<usize>,
    /// `s·k` center-relative offsets, patch-major.
    pub groups: Vec<[T; 3]>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn centers_flat(&self) -> Vec<T> {
        self.centers.as_flattened().to_vec()
    }

    pub fn groups_flat(&self) -> Vec<T> {
        self.groups.as_flattened().to_vec()
    }
}

pub fn build_patches<T: Scalar>(cloud: &PointCloud<T>, s: usize, k: usize, start: usize) -> Result<PatchSet<T>> {
    let center_indices = fps(cloud, s, start)?;
    let pts = cloud.points();
    let mut neighbor_indices = Vec::with_capacity(s * k);
    let mut groups = Vec::with_capacity(s * k);
    let mut centers = Vec::with_capacity(s);
    for &ci in &center_indices {
        let c = pts[ci];
        centers.push(c);
        for j in knn(cloud, c, k)? {
            let p = pts[j];
            neighbor_indices.push(j);
            groups.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        }
    }
    Ok(PatchSet {
        s,
        k,
        center_indices,
        centers,
        neighbor_indices,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> PointCloud<f64> {
        PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn fps_square_examples() {
        assert_eq!(fps(&square(), 1, 2).unwrap(), [2]);
        assert_eq!(fps(&square(), 2, 0).unwrap(), [0, 3]);
        assert_eq!(fps(&square(), 3, 0).unwrap(), [0, 3, 1]);
        assert!(fps(&square(), 5, 0).is_err());
        assert!(fps(&square(), 2, 4).is_err());
    }

    #[test]
    fn knn_examples() {
        let c = square();
        let mut all = knn(&c, [0.2, 0.2, 0.0], 4).unwrap();
        assert_eq!(all[0], 0);
        all.sort_unstable();
        assert_eq!(all, [0, 1, 2, 3]);
        assert_eq!(knn(&c, [1.0, 1.0, 0.0], 1).unwrap(), [3]);
        // p1 and p2 are equidistant from the origin query; index order wins.
        assert_eq!(knn(&c, [0.0, 0.0, 0.0], 3).unwrap(), [0, 1, 2]);
        assert!(knn(&c, [0.0, 0.0, 0.0], 5).is_err());
    }

    #[test]
    fn singleton_patches_have_zero_offsets() {
        let c = square();
        let p = build_patches(&c, 4, 1, 0).unwrap();
        assert!(p.groups.iter().all(|g| *g == [0.0, 0.0, 0.0]));
        let mut idx = p.center_indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, [0, 1, 2, 3]);
    }
}
