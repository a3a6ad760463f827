use std::cmp::Ordering;

use num_traits::Float;

use super::{centroid, dist2, GeometryError, Point3, PointCloud, Result};
use crate::exec::{self, ExecMode};

/// Fixed-width neighbor lists, `k` indices per query row, stored flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborLists {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl NeighborLists {
    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k)
    }
}

fn by_distance_then_index<T: Float>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Brute-force k nearest neighbors over flat row-major feature rows.
///
/// Each query row gets exactly `k` reference indices ordered by ascending
/// squared Euclidean distance; equal distances resolve to the lower index.
pub fn knn<T>(
    query: &[T],
    reference: &[T],
    dim: usize,
    k: usize,
    mode: ExecMode,
) -> Result<NeighborLists>
where
    T: Float + Send + Sync,
{
    if dim == 0 || query.len() % dim != 0 || reference.len() % dim != 0 {
        return Err(GeometryError::DimensionMismatch {
            query: query.len(),
            reference: reference.len(),
        });
    }
    let n_ref = reference.len() / dim;
    if k == 0 {
        return Err(GeometryError::ZeroNeighbors);
    }
    if k > n_ref {
        return Err(GeometryError::KTooLarge { k, n: n_ref });
    }
    let n_query = query.len() / dim;
    let rows = exec::map_range(mode, n_query, |qi| {
        let q = &query[qi * dim..(qi + 1) * dim];
        let mut cand: Vec<(T, usize)> = reference
            .chunks_exact(dim)
            .enumerate()
            .map(|(j, r)| {
                let mut d = T::zero();
                for (a, b) in q.iter().zip(r) {
                    let t = *a - *b;
                    d = d + t * t;
                }
                (d, j)
            })
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_distance_then_index);
            cand.truncate(k);
        }
        cand.sort_unstable_by(by_distance_then_index);
        cand.into_iter().map(|(_, j)| j).collect::<Vec<_>>()
    });
    Ok(NeighborLists { k, indices: rows.into_iter().flatten().collect() })
}

fn flatten(points: &[Point3]) -> Vec<f64> {
    points.iter().flat_map(|p| p.iter().copied()).collect()
}

/// kNN in 3D coordinate space between two point sets.
pub fn knn_points(query: &[Point3], reference: &[Point3], k: usize, mode: ExecMode) -> Result<NeighborLists> {
    knn(&flatten(query), &flatten(reference), 3, k, mode)
}

/// Greedy farthest-point sampling.
///
/// The first pick is the point farthest from the centroid; every later pick
/// maximizes the distance to the already chosen set. Ties go to the lowest
/// index, so the selected coordinates do not depend on input order.
pub fn farthest_point_sample(points: &[Point3], m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(GeometryError::EmptyCloud);
    }
    if m > n {
        return Err(GeometryError::MTooLarge { m, n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let c = centroid(points);
    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &c);
        if d > best {
            best = d;
            seed = i;
        }
    }
    let mut chosen = Vec::with_capacity(m);
    chosen.push(seed);
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &points[seed])).collect();
    while chosen.len() < m {
        let mut next = usize::MAX;
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if d > best {
                best = d;
                next = i;
            }
        }
        chosen.push(next);
        let q = points[next];
        for (d, p) in min_d.iter_mut().zip(points) {
            let nd = dist2(p, &q);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(chosen)
}

impl PointCloud {
    pub fn farthest_point_sample(&self, m: usize) -> Result<Vec<usize>> {
        farthest_point_sample(&self.points, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = seeded(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    /// Exhaustive oracle: sort every (distance, index) pair.
    fn knn_oracle(q: &[Point3], r: &[Point3], k: usize) -> Vec<Vec<usize>> {
        q.iter()
            .map(|a| {
                let mut all: Vec<(f64, usize)> = r.iter().enumerate().map(|(j, b)| (dist2(a, b), j)).collect();
                all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
                all.iter().take(k).map(|x| x.1).collect()
            })
            .collect()
    }

    #[test]
    fn knn_small_example() {
        let r = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
        let out = knn_points(&[[0.0, 0.0, 0.0]], &r, 2, ExecMode::Sequential).unwrap();
        assert_eq!(out.row(0), &[0, 1]);
    }

    #[test]
    fn knn_self_is_nearest() {
        let pts = random_points(25, 2);
        let out = knn_points(&pts, &pts, 1, ExecMode::Parallel).unwrap();
        for i in 0..pts.len() {
            assert_eq!(out.row(i), &[i]);
        }
    }

    #[test]
    fn knn_matches_oracle() {
        let pts = random_points(30, 11);
        let out = knn_points(&pts, &pts, 5, ExecMode::Parallel).unwrap();
        let oracle = knn_oracle(&pts, &pts, 5);
        for (i, row) in oracle.iter().enumerate() {
            assert_eq!(out.row(i), row.as_slice());
        }
    }

    #[test]
    fn knn_ties_use_lowest_index() {
        let r = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 0.0, 0.0]];
        let out = knn_points(&[[0.0; 3]], &r, 2, ExecMode::Sequential).unwrap();
        assert_eq!(out.row(0), &[0, 1]);
    }

    #[test]
    fn knn_errors() {
        let pts = random_points(3, 1);
        assert!(matches!(
            knn_points(&pts, &pts, 4, ExecMode::Sequential),
            Err(GeometryError::KTooLarge { k: 4, n: 3 })
        ));
        assert!(matches!(
            knn(&[0.0f64; 4], &[0.0f64; 6], 3, 1, ExecMode::Sequential),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fps_collinear() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let mut s = farthest_point_sample(&pts, 2).unwrap();
        s.sort();
        assert_eq!(s, vec![0, 2]);
    }

    #[test]
    fn fps_exhaustion_is_permutation() {
        let pts = random_points(17, 5);
        let mut s = farthest_point_sample(&pts, 17).unwrap();
        s.sort();
        assert_eq!(s, (0..17).collect::<Vec<_>>());
        assert!(matches!(farthest_point_sample(&pts, 18), Err(GeometryError::MTooLarge { .. })));
    }
}
