//! Geometric kernels over point sets.
//!
//! Everything here is a pure function of its inputs (plus an explicit RNG
//! where sampling is involved).

mod io;
mod neighbors;
mod voxel;

pub use io::{read_point_cloud, write_point_cloud};
pub use neighbors::{farthest_point_sample, knn, knn_points, NeighborLists};
pub use voxel::{sample_voxel_surfaces, voxelize, VoxelGrid};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud contains a non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("all points coincide; scale is undefined")]
    DegenerateCloud,
    #[error("k = {k} exceeds reference size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroNeighbors,
    #[error("dimension mismatch: query rows have {query}, reference rows have {reference}")]
    DimensionMismatch { query: usize, reference: usize },
    #[error("cannot sample {m} points from a cloud of {n}")]
    MTooLarge { m: usize, n: usize },
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("budget {budget} is smaller than the {occupied} occupied voxels")]
    BudgetTooSmall { budget: usize, occupied: usize },
    #[error("up axis must be 0, 1 or 2, got {0}")]
    BadAxis(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// An ordered point set with a category label.
///
/// Index order is significant: subset and permutation tests rely on indices
/// being stable identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub label: usize,
    pub source_id: String,
    /// Axis treated as vertical (0 = x, 1 = y, 2 = z).
    pub up_axis: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, label: usize, source_id: impl Into<String>) -> Result<Self> {
        let pc = PointCloud { points, label, source_id: source_id.into(), up_axis: 1 };
        pc.validate()?;
        Ok(pc)
    }

    pub fn with_up_axis(mut self, axis: usize) -> Result<Self> {
        if axis > 2 {
            return Err(GeometryError::BadAxis(axis));
        }
        self.up_axis = axis;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if self.up_axis > 2 {
            return Err(GeometryError::BadAxis(self.up_axis));
        }
        if let Some(i) = self.points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same metadata, new points.
    pub fn with_points(&self, points: Vec<Point3>) -> PointCloud {
        PointCloud {
            points,
            label: self.label,
            source_id: self.source_id.clone(),
            up_axis: self.up_axis,
        }
    }

    /// Pick points by index, keeping metadata.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        self.with_points(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Center on the centroid and scale so the farthest point has norm 1.
pub fn normalize_unit_sphere(pc: &PointCloud) -> Result<PointCloud> {
    pc.validate()?;
    let c = pc.centroid();
    let centered: Vec<Point3> =
        pc.points.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
    let max_norm = centered.iter().map(norm).fold(0.0, f64::max);
    if max_norm <= 0.0 || !max_norm.is_finite() {
        return Err(GeometryError::DegenerateCloud);
    }
    Ok(pc.with_points(
        centered.iter().map(|p| [p[0] / max_norm, p[1] / max_norm, p[2] / max_norm]).collect(),
    ))
}

/// The two horizontal axes for a given vertical axis, ordered so that a
/// positive angle is a right-handed rotation about the vertical axis.
pub(crate) fn horizontal_axes(up: usize) -> (usize, usize) {
    ((up + 1) % 3, (up + 2) % 3)
}

/// Right-handed rotation about the cloud's vertical axis.
pub fn rotate_about_up_axis(pc: &PointCloud, degrees: f64) -> PointCloud {
    let (a, b) = horizontal_axes(pc.up_axis);
    let (s, c) = degrees.to_radians().sin_cos();
    let points = pc
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            q[a] = p[a] * c - p[b] * s;
            q[b] = p[a] * s + p[b] * c;
            q
        })
        .collect();
    pc.with_points(points)
}

/// Negate the vertical coordinate of every point.
pub fn invert_vertical(pc: &PointCloud) -> PointCloud {
    let up = pc.up_axis;
    pc.with_points(
        pc.points
            .iter()
            .map(|p| {
                let mut q = *p;
                q[up] = -p[up];
                q
            })
            .collect(),
    )
}
