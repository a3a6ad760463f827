//! Datasets: OFF ingestion, the procedural desk-scale dataset, training
//! augmentation and the on-disk cache layout.
//!
//! Cache layout: `{root}/categories.txt` (one name per line, line order =
//! label id) and `{root}/{split}/{category}/{source_id}.xyz`.

pub mod mesh;
pub mod synth;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_range, ExecMode};
use crate::geometry::{read_point_cloud, write_point_cloud, GeometryError, Point3, PointCloud};
use crate::rng::{derive_seed, seeded};
pub use mesh::{load_off_mesh, sample_surface_points, sample_surface_uniform, TriMesh};
pub use synth::CATEGORIES;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed OFF at line {line}: {msg}")]
    MalformedOff { line: usize, msg: String },
    #[error("mesh has no triangle with positive area")]
    DegenerateMesh,
    #[error("invalid count: {0}")]
    BadCount(String),
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labelled clouds of one split; `items[i].label` indexes `category_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<PointCloud>,
    pub split: Split,
    pub category_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of category `label` in dataset order.
    pub fn of_category(&self, label: usize) -> Vec<&PointCloud> {
        self.items.iter().filter(|pc| pc.label == label).collect()
    }
}

/// Procedural ten-family dataset. Each object has its own RNG stream derived
/// from `(seed, split, category, index)`, so train and test never share a
/// stream and the result does not depend on the execution mode.
pub fn synth_dataset(
    per_class_train: usize,
    per_class_test: usize,
    n_points: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(Dataset, Dataset)> {
    if per_class_train == 0 || per_class_test == 0 || n_points == 0 {
        return Err(DataError::BadCount("per-class counts and n_points must be positive".into()));
    }
    let names: Vec<String> = CATEGORIES.iter().map(|s| s.to_string()).collect();
    let make = |split: Split, per_class: usize| -> Result<Dataset> {
        let items = map_range(mode, CATEGORIES.len() * per_class, |k| {
            let (label, i) = (k / per_class, k % per_class);
            let id = format!("{}_{}_{:04}", CATEGORIES[label], split.name(), i);
            let mut rng = seeded(derive_seed(seed, &format!("synth/{id}")));
            let mesh = synth::family_mesh(label, &mut rng);
            sample_surface_uniform(&mesh, n_points, label, &id, &mut rng)
        });
        Ok(Dataset { items: items.into_iter().collect::<Result<_>>()?, split, category_names: names.clone() })
    };
    Ok((make(Split::Train, per_class_train)?, make(Split::Test, per_class_test)?))
}

// ---------------------------------------------------------------- augment

/// One draw of the three training augmentations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub drop_prob: f64,
    pub scale: f64,
    pub shift: Point3,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { drop_prob: 0.0, scale: 1.0, shift: [0.0; 3] };

    /// Dropout probability in [0, 0.875], scale in [0.8, 1.25], shift in [-0.1, 0.1]^3.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let drop_prob = rng.gen_range(0.0..=0.875);
        let scale = rng.gen_range(0.8..=1.25);
        let shift = [0; 3].map(|_| rng.gen_range(-0.1..=0.1));
        AugmentParams { drop_prob, scale, shift }
    }
}

/// Dropout (dropped points become copies of the first point), then scaling,
/// then shifting. Point count and label are preserved.
pub fn apply_augment<R: Rng + ?Sized>(pc: &PointCloud, params: &AugmentParams, rng: &mut R) -> PointCloud {
    let first = pc.points[0];
    let points = pc
        .points
        .iter()
        .map(|&p| {
            let p = if params.drop_prob > 0.0 && rng.gen::<f64>() < params.drop_prob { first } else { p };
            [0, 1, 2].map(|d| p[d] * params.scale + params.shift[d])
        })
        .collect();
    pc.with_points(points)
}

pub fn augment<R: Rng + ?Sized>(pc: &PointCloud, rng: &mut R) -> PointCloud {
    let params = AugmentParams::sample(rng);
    apply_augment(pc, &params, rng)
}

// ------------------------------------------------------------------ cache

pub fn write_categories(root: &Path, names: &[String]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(root.join("categories.txt"), text)?;
    Ok(())
}

pub fn read_categories(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.is_empty() {
        return Err(DataError::Layout(format!("{} lists no categories", path.display())));
    }
    Ok(names)
}

pub fn write_dataset(root: &Path, ds: &Dataset) -> Result<()> {
    write_categories(root, &ds.category_names)?;
    for pc in &ds.items {
        let dir = root.join(ds.split.name()).join(&ds.category_names[pc.label]);
        fs::create_dir_all(&dir)?;
        let f = fs::File::create(dir.join(format!("{}.xyz", pc.source_id)))?;
        write_point_cloud(pc, BufWriter::new(f))?;
    }
    Ok(())
}

/// Load one split; items ordered by category, then file name.
pub fn read_dataset(root: &Path, split: Split) -> Result<Dataset> {
    let names = read_categories(&root.join("categories.txt"))?;
    let mut items = Vec::new();
    for (label, name) in names.iter().enumerate() {
        let dir = root.join(split.name()).join(name);
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "xyz"));
        files.sort();
        for path in files {
            let pc = read_point_cloud(BufReader::new(fs::File::open(&path)?))
                .map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
            if pc.label != label {
                return Err(DataError::Layout(format!(
                    "{}: label {} but directory is category {label} ({name})",
                    path.display(),
                    pc.label
                )));
            }
            items.push(pc);
        }
    }
    if items.is_empty() {
        return Err(DataError::Layout(format!("no {} clouds under {}", split.name(), root.display())));
    }
    Ok(Dataset { items, split, category_names: names })
}

/// Sample every mesh of a `{category}/{train,test}/*.off` tree. Categories
/// are the sorted subdirectory names.
pub fn ingest_off_tree(src: &Path, n_points: usize, seed: u64, mode: ExecMode) -> Result<(Dataset, Dataset)> {
    let mut names: Vec<String> = fs::read_dir(src)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(DataError::Layout(format!("no category directories under {}", src.display())));
    }
    let load = |split: Split| -> Result<Dataset> {
        let mut jobs = Vec::new();
        for (label, name) in names.iter().enumerate() {
            let dir = src.join(name).join(split.name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> =
                fs::read_dir(&dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.extension().is_some_and(|e| e == "off")).collect();
            files.sort();
            jobs.extend(files.into_iter().map(|p| (label, p)));
        }
        let items = map_range(mode, jobs.len(), |i| -> Result<PointCloud> {
            let (label, path) = &jobs[i];
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().replace(char::is_whitespace, "_");
            let text = fs::read_to_string(path)?;
            let mesh = load_off_mesh(&text).map_err(|e| DataError::Layout(format!("{}: {e}", path.display())))?;
            let mut rng = seeded(derive_seed(seed, &format!("off/{}/{stem}", split.name())));
            sample_surface_uniform(&mesh, n_points, *label, &stem, &mut rng)
        });
        Ok(Dataset { items: items.into_iter().collect::<Result<_>>()?, split, category_names: names.clone() })
    };
    Ok((load(Split::Train)?, load(Split::Test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::norm;

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let (a, at) = synth_dataset(3, 2, 64, 11, ExecMode::Sequential).unwrap();
        let (b, bt) = synth_dataset(3, 2, 64, 11, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(at, bt);
        for label in 0..10 {
            assert_eq!(a.of_category(label).len(), 3);
            assert_eq!(at.of_category(label).len(), 2);
        }
        for pc in a.items.iter().chain(&at.items) {
            assert_eq!(pc.len(), 64);
            let c = pc.centroid();
            assert!(norm(&c) < 1e-12);
            let max = pc.points.iter().map(norm).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        let (c, _) = synth_dataset(3, 2, 64, 12, ExecMode::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn augment_identity_and_count() {
        let (ds, _) = synth_dataset(1, 1, 128, 1, ExecMode::Sequential).unwrap();
        let pc = &ds.items[0];
        let mut rng = seeded(3);
        assert_eq!(apply_augment(pc, &AugmentParams::IDENTITY, &mut rng), *pc);
        for _ in 0..20 {
            let out = augment(pc, &mut rng);
            assert_eq!(out.len(), pc.len());
            assert_eq!(out.label, pc.label);
        }
    }

    #[test]
    fn augment_norm_bound() {
        let (ds, _) = synth_dataset(1, 1, 128, 2, ExecMode::Sequential).unwrap();
        let mut rng = seeded(4);
        for pc in &ds.items {
            let params = AugmentParams::sample(&mut rng);
            assert!((0.0..=0.875).contains(&params.drop_prob));
            assert!((0.8..=1.25).contains(&params.scale));
            let out = apply_augment(pc, &params, &mut rng);
            let orig = pc.points.iter().map(norm).fold(0.0, f64::max);
            let got = out.points.iter().map(norm).fold(0.0, f64::max);
            assert!(got <= 1.25 * orig + norm(&params.shift) + 1e-12);
            // every output point is a scaled+shifted input point
            for q in &out.points {
                let back = [0, 1, 2].map(|d| (q[d] - params.shift[d]) / params.scale);
                assert!(pc.points.iter().any(|p| crate::geometry::dist2(p, &back) < 1e-20));
            }
        }
    }

    #[test]
    fn full_dropout_collapses_to_first_point() {
        let (ds, _) = synth_dataset(1, 1, 32, 3, ExecMode::Sequential).unwrap();
        let pc = &ds.items[0];
        let p = AugmentParams { drop_prob: 1.0, scale: 1.0, shift: [0.0; 3] };
        let out = apply_augment(pc, &p, &mut seeded(0));
        assert!(out.points.iter().all(|q| *q == pc.points[0]));
    }

    #[test]
    fn cache_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let (train, test) = synth_dataset(2, 1, 16, 5, ExecMode::Sequential).unwrap();
        write_dataset(dir, &train).unwrap();
        write_dataset(dir, &test).unwrap();
        assert_eq!(read_dataset(dir, Split::Train).unwrap(), train);
        assert_eq!(read_dataset(dir, Split::Test).unwrap(), test);
        assert_eq!(read_categories(&dir.join("categories.txt")).unwrap().len(), 10);
    }
}
