//! Uniform grid over a static point set with exact nearest-neighbor queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::linalg::Vec3;
use crate::mesh::Aabb;
use crate::scalar::Real;

/// Exact nearest / k-nearest point lookup.
///
/// Results are identical to a linear scan that compares `(squared distance,
/// index)` lexicographically, so ties resolve to the lowest index.
#[derive(Clone, Debug)]
pub struct PointGrid<T> {
    points: Vec<Vec3<T>>,
    origin: Vec3<T>,
    cell: T,
    dims: [usize; 3],
    /// CSR layout: `cell_start[c]..cell_start[c + 1]` indexes `entries`.
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate<T> {
    d2: T,
    idx: usize,
}

impl<T: Real> Eq for Candidate<T> {}

impl<T: Real> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

#[inline]
fn better<T: Real>(d2: T, idx: usize, best_d2: T, best_idx: usize) -> bool {
    d2 < best_d2 || (d2 == best_d2 && idx < best_idx)
}

impl<T: Real> PointGrid<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        let bounds = Aabb::from_points(&points);
        let n = points.len().max(1);
        let ext = if points.is_empty() {
            Vec3::splat(T::one())
        } else {
            bounds.extent()
        };
        let max_ext = ext.x.max(ext.y).max(ext.z).max(T::lit(1e-6));
        // One cell per point on average; finer grids spend queries walking
        // empty shells around points off the surface.
        let target_cells = T::from_usize_lossy(n);
        let vol = (ext.x.max(max_ext * T::lit(1e-3)))
            * (ext.y.max(max_ext * T::lit(1e-3)))
            * (ext.z.max(max_ext * T::lit(1e-3)));
        let mut cell = (vol / target_cells).cbrt().max(max_ext / T::lit(256.0));
        if !(cell > T::zero()) || !cell.is_finite() {
            cell = T::one();
        }
        let dim = |e: T| -> usize { ((e / cell).floor().to_usize().unwrap_or(0) + 1).clamp(1, 256) };
        let dims = [dim(ext.x), dim(ext.y), dim(ext.z)];
        let origin = if points.is_empty() { Vec3::zero() } else { bounds.min };
        let mut grid = PointGrid {
            points,
            origin,
            cell,
            dims,
            cell_start: Vec::new(),
            entries: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let keys: Vec<usize> = grid
            .points
            .iter()
            .map(|p| grid.linear(grid.cell_of(*p)))
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0; grid.points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        grid.cell_start = counts;
        grid.entries = entries;
        grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    fn cell_of(&self, p: Vec3<T>) -> [usize; 3] {
        let c = |v: T, o: T, d: usize| -> usize {
            let f = ((v - o) / self.cell).floor();
            if !(f > T::zero()) {
                0
            } else {
                f.to_usize().unwrap_or(usize::MAX).min(d - 1)
            }
        };
        [
            c(p.x, self.origin.x, self.dims[0]),
            c(p.y, self.origin.y, self.dims[1]),
            c(p.z, self.origin.z, self.dims[2]),
        ]
    }

    #[inline]
    fn linear(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Lower bound on the distance from `q` to any point in a cell outside the
    /// block of half-width `r` around `center`; `None` once the block covers
    /// the whole grid.
    fn outside_bound(&self, q: Vec3<T>, center: [usize; 3], r: usize) -> Option<T> {
        let mut bound = T::infinity();
        let mut covered = true;
        for a in 0..3 {
            if center[a] >= r + 1 {
                covered = false;
                let edge = self.origin[a] + self.cell * T::from_usize_lossy(center[a] - r);
                bound = bound.min((q[a] - edge).max(T::zero()));
            }
            if center[a] + r + 1 < self.dims[a] {
                covered = false;
                let edge = self.origin[a] + self.cell * T::from_usize_lossy(center[a] + r + 1);
                bound = bound.min((edge - q[a]).max(T::zero()));
            }
        }
        if covered {
            None
        } else {
            // Absorb rounding in cell assignment.
            Some((bound - self.cell * T::lit(1e-4)).max(T::zero()))
        }
    }

    fn visit_shell(&self, center: [usize; 3], r: usize, mut f: impl FnMut(usize)) {
        let lo = |a: usize| center[a].saturating_sub(r);
        let hi = |a: usize| (center[a] + r).min(self.dims[a] - 1);
        let on_shell = |v: usize, a: usize| v.abs_diff(center[a]) == r;
        let mut cell = |x: usize, y: usize, z: usize| {
            let c = self.linear([x, y, z]);
            for &i in &self.entries[self.cell_start[c]..self.cell_start[c + 1]] {
                f(i);
            }
        };
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                if on_shell(z, 2) || on_shell(y, 1) {
                    for x in lo(0)..=hi(0) {
                        cell(x, y, z);
                    }
                } else {
                    // Interior rows only touch the shell at their two ends.
                    if center[0] >= r {
                        cell(center[0] - r, y, z);
                    }
                    if r > 0 && center[0] + r < self.dims[0] {
                        cell(center[0] + r, y, z);
                    }
                }
            }
        }
    }

    /// Index of the nearest point (lowest index on ties).
    pub fn nearest(&self, q: Vec3<T>) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let center = self.cell_of(q);
        let mut best_idx = usize::MAX;
        let mut best_d2 = T::infinity();
        let mut r = 0;
        loop {
            self.visit_shell(center, r, |i| {
                let d2 = (self.points[i] - q).norm_squared();
                if better(d2, i, best_d2, best_idx) {
                    best_d2 = d2;
                    best_idx = i;
                }
            });
            match self.outside_bound(q, center, r) {
                None => break,
                Some(b) if best_idx != usize::MAX && b * b > best_d2 => break,
                _ => r += 1,
            }
        }
        Some(best_idx)
    }

    /// The `k` nearest points as `(index, squared distance)`, closest first.
    pub fn k_nearest(&self, q: Vec3<T>, k: usize) -> Vec<(usize, T)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let k = k.min(self.points.len());
        let center = self.cell_of(q);
        let mut heap: BinaryHeap<Candidate<T>> = BinaryHeap::with_capacity(k + 1);
        let mut r = 0;
        loop {
            self.visit_shell(center, r, |i| {
                let cand = Candidate {
                    d2: (self.points[i] - q).norm_squared(),
                    idx: i,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().expect("non-empty") {
                    heap.pop();
                    heap.push(cand);
                }
            });
            match self.outside_bound(q, center, r) {
                None => break,
                Some(b) if heap.len() == k && b * b > heap.peek().expect("non-empty").d2 => break,
                _ => r += 1,
            }
        }
        let mut out: Vec<_> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }
}

/// Linear-scan reference for [`PointGrid::nearest`].
pub fn nearest_brute_force<T: Real>(points: &[Vec3<T>], q: Vec3<T>) -> Option<usize> {
    let mut best_idx = usize::MAX;
    let mut best_d2 = T::infinity();
    for (i, p) in points.iter().enumerate() {
        let d2 = (*p - q).norm_squared();
        if better(d2, i, best_d2, best_idx) {
            best_d2 = d2;
            best_idx = i;
        }
    }
    (best_idx != usize::MAX).then_some(best_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_on_clustered_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vec3<f64>> = (0..2000)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 5.0 };
                vec3(c + rng.random::<f64>(), rng.random::<f64>() * 0.1, rng.random::<f64>())
            })
            .collect();
        let grid = PointGrid::new(points.clone());
        for _ in 0..3000 {
            let q = vec3(
                rng.random_range(-3.0..9.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..3.0),
            );
            assert_eq!(grid.nearest(q), nearest_brute_force(&points, q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let points = vec![vec3(1.0, 0.0, 0.0), vec3(-1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)];
        let grid = PointGrid::new(points);
        assert_eq!(grid.nearest(vec3(0.0, 0.0, 0.0)), Some(0));
        // Duplicates: the earlier copy wins.
        let grid = PointGrid::new(vec![vec3(0.0f64, 0.0, 0.0), vec3(2.0, 2.0, 2.0), vec3(2.0, 2.0, 2.0)]);
        let q = vec3(2.0, 2.0, 2.1);
        assert_eq!(grid.nearest(q), Some(1));
        let idx: Vec<usize> = grid.k_nearest(q, 2).into_iter().map(|(i, _)| i).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn empty_and_single_point_grids() {
        let empty = PointGrid::<f64>::new(Vec::new());
        assert_eq!(empty.nearest(Vec3::zero()), None);
        let one = PointGrid::new(vec![vec3(0.5, 0.5, 0.5)]);
        assert_eq!(one.nearest(vec3(100.0, -4.0, 3.0)), Some(0));
        assert_eq!(one.k_nearest(Vec3::zero(), 5).len(), 1);
    }

    proptest! {
        #[test]
        fn k_nearest_matches_sorted_scan(seed in 0u64..500, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<Vec3<f64>> = (0..300)
                .map(|_| vec3(rng.random(), rng.random::<f64>() * 2.0, rng.random()))
                .collect();
            let grid = PointGrid::new(points.clone());
            let q = vec3(rng.random_range(-1.0..2.0), rng.random_range(-1.0..3.0), rng.random_range(-1.0..2.0));
            let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (*p - q).norm_squared())).collect();
            all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(k);
            prop_assert_eq!(grid.k_nearest(q, k), all);
        }
    }
}
