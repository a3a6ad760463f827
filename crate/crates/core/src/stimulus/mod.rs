//! Experimental stimuli: density-downsampled, inverted and voxel ("Lego")
//! clouds, rotation frames, and trial manifests.

mod manifest;

pub use manifest::*;

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    dist2, horizontal_axes, invert_vertical, knn_points, normalize_unit_sphere, rotate_about_up_axis,
    sample_voxel_surfaces, voxelize, GeometryError, Point3, PointCloud,
};
use crate::exec::ExecMode;

/// Point densities shown in the first experiment.
pub const PROPORTIONS: [f64; 7] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];
/// Voxel edge lengths used in the second experiment.
pub const VOXEL_SIZES: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("proportion must be in (0, 1], got {0}")]
    InvalidProportion(f64),
    #[error("{n} points at proportion {p} rounds to an empty cloud")]
    EmptyResult { n: usize, p: f64 },
    #[error("category {category} has {got} objects; expected {want}")]
    WrongObjectCount { category: String, got: usize, want: usize },
    #[error("expected {want} categories, got {got}")]
    WrongCategoryCount { got: usize, want: usize },
    #[error("invalid trial {0}: duplicate id, unknown category or bad condition")]
    InvalidTrial(String),
    #[error("frame_count must be at least 1")]
    NoFrames,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, StimulusError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Density,
    Inverted,
    Lego,
}

impl ConditionKind {
    pub fn name(self) -> &'static str {
        match self {
            ConditionKind::Density => "density",
            ConditionKind::Inverted => "inverted",
            ConditionKind::Lego => "lego",
        }
    }
}

/// One experimental manipulation. `proportion` is set for density and
/// inverted conditions, `voxel_size` for Lego conditions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proportion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<f64>,
}

impl Condition {
    pub fn density(p: f64) -> Self {
        Condition { kind: ConditionKind::Density, proportion: Some(p), voxel_size: None }
    }

    pub fn inverted(p: f64) -> Self {
        Condition { kind: ConditionKind::Inverted, proportion: Some(p), voxel_size: None }
    }

    pub fn lego(v: f64) -> Self {
        Condition { kind: ConditionKind::Lego, proportion: None, voxel_size: Some(v) }
    }

    /// The numeric level: proportion or voxel size.
    pub fn value(&self) -> f64 {
        self.proportion.or(self.voxel_size).unwrap_or(f64::NAN)
    }

    /// Build from a kind name and level, as written in figure tables.
    pub fn from_parts(kind: &str, value: f64) -> Option<Self> {
        match kind {
            "density" => Some(Self::density(value)),
            "inverted" => Some(Self::inverted(value)),
            "lego" => Some(Self::lego(value)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ConditionKind::Density | ConditionKind::Inverted => match self.proportion {
                Some(p) if p > 0.0 && p <= 1.0 && self.voxel_size.is_none() => Ok(()),
                _ => Err(StimulusError::InvalidProportion(self.value())),
            },
            ConditionKind::Lego => match self.voxel_size {
                Some(v) if v > 0.0 && v.is_finite() && self.proportion.is_none() => Ok(()),
                _ => Err(GeometryError::InvalidVoxelSize(self.value()).into()),
            },
        }
    }
}

// Canonical order: density ascending, then inverted ascending, then voxel
// size ascending.
impl PartialEq for Condition {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Condition {}

impl PartialOrd for Condition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Condition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.kind.cmp(&other.kind).then(self.value().total_cmp(&other.value()))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.kind.name(), self.value())
    }
}

/// `round(n * p)` with halves rounded up.
pub fn rounded_count(n: usize, p: f64) -> usize {
    // the epsilon absorbs representation error in products such as 5 * 0.3
    (n as f64 * p + 0.5 + 1e-9).floor() as usize
}

/// Sorted indices of a uniformly random subset of size `rounded_count(n, p)`.
pub fn downsample_indices<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(StimulusError::InvalidProportion(p));
    }
    let m = rounded_count(n, p);
    if m == 0 {
        return Err(StimulusError::EmptyResult { n, p });
    }
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Random subset of `round(|pc| * p)` points in their original order.
pub fn downsample_proportion<R: Rng + ?Sized>(pc: &PointCloud, p: f64, rng: &mut R) -> Result<PointCloud> {
    Ok(pc.select(&downsample_indices(pc.len(), p, rng)?))
}

/// Subsample, then flip upside down; the same RNG state gives the same subset
/// as [`downsample_proportion`].
pub fn make_inverted<R: Rng + ?Sized>(pc: &PointCloud, p: f64, rng: &mut R) -> Result<PointCloud> {
    Ok(invert_vertical(&downsample_proportion(pc, p, rng)?))
}

/// Voxel-surface resampling before the final normalization.
pub fn lego_points<R: Rng + ?Sized>(pc: &PointCloud, voxel_size: f64, target_points: usize, rng: &mut R) -> Result<Vec<Point3>> {
    let grid = voxelize(pc, voxel_size)?;
    Ok(sample_voxel_surfaces(&grid, target_points, rng)?)
}

/// Voxelize, scatter `target_points` over the occupied voxel faces and
/// renormalize to the unit sphere.
pub fn make_lego<R: Rng + ?Sized>(pc: &PointCloud, voxel_size: f64, target_points: usize, rng: &mut R) -> Result<PointCloud> {
    let pts = lego_points(pc, voxel_size, target_points, rng)?;
    Ok(normalize_unit_sphere(&pc.with_points(pts))?)
}

/// Directed mean nearest-neighbor distance from `a` to `b`.
pub fn directed_mean_distance(a: &[Point3], b: &[Point3], mode: ExecMode) -> Result<f64> {
    let nn = knn_points(a, b, 1, mode)?;
    Ok(a.iter().zip(&nn.indices).map(|(p, &j)| dist2(p, &b[j]).sqrt()).sum::<f64>() / a.len() as f64)
}

/// Symmetric Chamfer distance: the larger of the two directed mean
/// nearest-neighbor distances.
pub fn chamfer_distance(a: &[Point3], b: &[Point3], mode: ExecMode) -> Result<f64> {
    Ok(directed_mean_distance(a, b, mode)?.max(directed_mean_distance(b, a, mode)?))
}

/// Largest nearest-neighbor distance in either direction.
pub fn hausdorff_distance(a: &[Point3], b: &[Point3], mode: ExecMode) -> Result<f64> {
    let one = |x: &[Point3], y: &[Point3]| -> Result<f64> {
        let nn = knn_points(x, y, 1, mode)?;
        Ok(x.iter().zip(&nn.indices).map(|(p, &j)| dist2(p, &y[j]).sqrt()).fold(0.0, f64::max))
    };
    Ok(one(a, b)?.max(one(b, a)?))
}

/// One orthographic view: `[screen_x, screen_y, depth]` per point.
pub type Frame = Vec<[f64; 3]>;

/// Frame `k` projects the cloud rotated by `k * degrees_per_frame` about its
/// vertical axis onto the plane facing a horizontal viewer.
pub fn render_frames(pc: &PointCloud, frame_count: usize, degrees_per_frame: f64) -> Result<Vec<Frame>> {
    if frame_count == 0 {
        return Err(StimulusError::NoFrames);
    }
    let up = pc.up_axis;
    let (depth_axis, screen_axis) = horizontal_axes(up);
    Ok((0..frame_count)
        .map(|k| {
            let r = rotate_about_up_axis(pc, k as f64 * degrees_per_frame);
            r.points.iter().map(|p| [p[screen_axis], p[up], p[depth_axis]]).collect()
        })
        .collect())
}
