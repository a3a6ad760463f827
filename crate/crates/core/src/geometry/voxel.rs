use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Point3, PointCloud, Result};

/// Axis-aligned occupancy grid. Voxel `i` is the half-open cube
/// `[origin + i*s, origin + (i+1)*s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub origin: Point3,
    /// Kept in lexicographic order.
    pub occupied: BTreeSet<[i64; 3]>,
}

impl VoxelGrid {
    pub fn index_of(&self, p: &Point3) -> [i64; 3] {
        let mut idx = [0i64; 3];
        for d in 0..3 {
            idx[d] = ((p[d] - self.origin[d]) / self.voxel_size).floor() as i64;
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn voxel_min(&self, idx: &[i64; 3]) -> Point3 {
        let s = self.voxel_size;
        [
            self.origin[0] + idx[0] as f64 * s,
            self.origin[1] + idx[1] as f64 * s,
            self.origin[2] + idx[2] as f64 * s,
        ]
    }
}

pub fn voxelize(pc: &PointCloud, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(GeometryError::InvalidVoxelSize(voxel_size));
    }
    pc.validate()?;
    let mut origin = [f64::INFINITY; 3];
    for p in &pc.points {
        for d in 0..3 {
            origin[d] = origin[d].min(p[d]);
        }
    }
    let mut grid = VoxelGrid { voxel_size, origin, occupied: BTreeSet::new() };
    for p in &pc.points {
        let idx = grid.index_of(p);
        grid.occupied.insert(idx);
    }
    Ok(grid)
}

/// Scatter `budget` points over the faces of the occupied voxels.
///
/// Every voxel gets `budget / n` points and the first `budget % n` voxels in
/// lexicographic order get one extra. Each point picks one of the six faces
/// uniformly and a uniform position on that face.
pub fn sample_voxel_surfaces<R: Rng + ?Sized>(
    grid: &VoxelGrid,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<Point3>> {
    let n = grid.occupied.len();
    if n == 0 {
        return Err(GeometryError::EmptyCloud);
    }
    if budget < n {
        return Err(GeometryError::BudgetTooSmall { budget, occupied: n });
    }
    let base = budget / n;
    let extra = budget % n;
    let s = grid.voxel_size;
    let mut out = Vec::with_capacity(budget);
    for (vi, idx) in grid.occupied.iter().enumerate() {
        let lo = grid.voxel_min(idx);
        let count = base + usize::from(vi < extra);
        for _ in 0..count {
            let face: usize = rng.gen_range(0..6);
            let axis = face / 2;
            let side = (face % 2) as f64;
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = if d == axis { lo[d] + side * s } else { lo[d] + rng.gen::<f64>() * s };
            }
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, 0, "v").unwrap()
    }

    #[test]
    fn single_point() {
        let g = voxelize(&cloud(vec![[0.05, 0.05, 0.05]]), 0.1).unwrap();
        assert_eq!(g.occupied.into_iter().collect::<Vec<_>>(), vec![[0, 0, 0]]);
    }

    #[test]
    fn two_points() {
        let g = voxelize(&cloud(vec![[0.0, 0.0, 0.0], [0.25, 0.0, 0.0]]), 0.1).unwrap();
        assert_eq!(g.occupied.into_iter().collect::<Vec<_>>(), vec![[0, 0, 0], [2, 0, 0]]);
    }

    #[test]
    fn bad_size() {
        assert!(voxelize(&cloud(vec![[0.0; 3]]), 0.0).is_err());
        assert!(voxelize(&cloud(vec![[0.0; 3]]), f64::NAN).is_err());
    }

    #[test]
    fn unit_cube_faces() {
        let mut occ = BTreeSet::new();
        occ.insert([0, 0, 0]);
        let g = VoxelGrid { voxel_size: 1.0, origin: [0.0; 3], occupied: occ };
        let pts = sample_voxel_surfaces(&g, 6, &mut seeded(1)).unwrap();
        assert_eq!(pts.len(), 6);
        for p in pts {
            assert!(p.iter().any(|&c| c == 0.0 || c == 1.0));
            assert!(p.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }

    #[test]
    fn one_point_per_voxel() {
        let pc = cloud((0..40).map(|i| [i as f64 * 0.37, (i % 3) as f64, 0.0]).collect());
        let g = voxelize(&pc, 0.5).unwrap();
        let pts = sample_voxel_surfaces(&g, g.len(), &mut seeded(2)).unwrap();
        assert_eq!(pts.len(), g.len());
        let cube_of = |p: &Point3| {
            g.occupied.iter().position(|idx| {
                let lo = g.voxel_min(idx);
                (0..3).all(|d| p[d] >= lo[d] - 1e-9 && p[d] <= lo[d] + g.voxel_size + 1e-9)
            })
        };
        for (i, p) in pts.iter().enumerate() {
            // lexicographic order matches output order, one point each
            let lo = g.voxel_min(g.occupied.iter().nth(i).unwrap());
            assert!((0..3).all(|d| p[d] >= lo[d] - 1e-9 && p[d] <= lo[d] + g.voxel_size + 1e-9));
            assert!(cube_of(p).is_some());
        }
    }

    #[test]
    fn remainder_goes_to_first_voxels() {
        let pc = cloud(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let g = voxelize(&pc, 0.5).unwrap();
        let pts = sample_voxel_surfaces(&g, 8, &mut seeded(3)).unwrap();
        let counts: Vec<usize> = g
            .occupied
            .iter()
            .map(|idx| {
                let lo = g.voxel_min(idx);
                pts.iter().filter(|p| (0..3).all(|d| p[d] >= lo[d] && p[d] <= lo[d] + 0.5)).count()
            })
            .collect();
        assert_eq!(counts, vec![3, 3, 2]);
        assert!(matches!(
            sample_voxel_surfaces(&g, 2, &mut seeded(0)),
            Err(GeometryError::BudgetTooSmall { .. })
        ));
    }
}
