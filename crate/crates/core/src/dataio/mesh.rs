//! Triangle meshes: OFF parsing, primitive builders and area-weighted
//! surface sampling.

use std::f64::consts::PI;

use rand::Rng;

use super::{DataError, Result};
use crate::geometry::{normalize_unit_sphere, Point3, PointCloud};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn add_scaled(p: Point3, d: Point3, s: f64) -> Point3 {
    [p[0] + d[0] * s, p[1] + d[1] * s, p[2] + d[2] * s]
}

fn unit(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

impl TriMesh {
    pub fn append(&mut self, other: TriMesh) {
        let off = self.vertices.len();
        self.vertices.extend(other.vertices);
        self.faces.extend(other.faces.into_iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }

    pub fn face_areas(&self) -> Vec<f64> {
        self.faces.iter().map(|f| triangle_area(self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]])).collect()
    }

    /// Box spanned by three orthogonal half-axes around `center`.
    pub fn oriented_box(center: Point3, axes: [Point3; 3]) -> TriMesh {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            let mut p = center;
            for (a, axis) in axes.iter().enumerate() {
                p = add_scaled(p, *axis, s(a));
            }
            vertices.push(p);
        }
        // quads as corner bit patterns
        let quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]];
        let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
        TriMesh { vertices, faces }
    }

    /// Axis-aligned box.
    pub fn cuboid(center: Point3, half: [f64; 3]) -> TriMesh {
        Self::oriented_box(center, [[half[0], 0.0, 0.0], [0.0, half[1], 0.0], [0.0, 0.0, half[2]]])
    }

    /// Open frustum from `p0` (radius `r0`) to `p1` (radius `r1`), optionally capped.
    pub fn frustum(p0: Point3, p1: Point3, r0: f64, r1: f64, segments: usize, cap0: bool, cap1: bool) -> TriMesh {
        let axis = unit(sub(p1, p0));
        let helper = if axis[1].abs() < 0.9 { [0.0, 1.0, 0.0] } else { [1.0, 0.0, 0.0] };
        let u = unit(cross(axis, helper));
        let v = cross(axis, u);
        let ring = |c: Point3, r: f64| -> Vec<Point3> {
            (0..segments)
                .map(|s| {
                    let t = 2.0 * PI * s as f64 / segments as f64;
                    add_scaled(add_scaled(c, u, r * t.cos()), v, r * t.sin())
                })
                .collect()
        };
        let mut vertices = ring(p0, r0);
        vertices.extend(ring(p1, r1));
        let mut faces = Vec::new();
        for s in 0..segments {
            let n = (s + 1) % segments;
            faces.push([s, n, segments + n]);
            faces.push([s, segments + n, segments + s]);
        }
        for (cap, c, base) in [(cap0, p0, 0), (cap1, p1, segments)] {
            if cap {
                let ci = vertices.len();
                vertices.push(c);
                for s in 0..segments {
                    faces.push([ci, base + s, base + (s + 1) % segments]);
                }
            }
        }
        TriMesh { vertices, faces }
    }

    pub fn cylinder(p0: Point3, p1: Point3, r: f64, segments: usize) -> TriMesh {
        Self::frustum(p0, p1, r, r, segments, true, true)
    }

    /// Ellipsoid patch between polar angles `theta0..theta1` (0 = top pole).
    pub fn ellipsoid(center: Point3, radii: [f64; 3], theta0: f64, theta1: f64, rings: usize, segments: usize) -> TriMesh {
        let mut vertices = Vec::new();
        for i in 0..=rings {
            let th = theta0 + (theta1 - theta0) * i as f64 / rings as f64;
            for s in 0..segments {
                let ph = 2.0 * PI * s as f64 / segments as f64;
                vertices.push([
                    center[0] + radii[0] * th.sin() * ph.cos(),
                    center[1] + radii[1] * th.cos(),
                    center[2] + radii[2] * th.sin() * ph.sin(),
                ]);
            }
        }
        let mut faces = Vec::new();
        for i in 0..rings {
            for s in 0..segments {
                let n = (s + 1) % segments;
                let (a, b, c, d) = (i * segments + s, i * segments + n, (i + 1) * segments + n, (i + 1) * segments + s);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        let mut m = TriMesh { vertices, faces };
        m.drop_degenerate();
        m
    }

    /// Chain of cylinders through `points`.
    pub fn tube(points: &[Point3], r: f64, segments: usize) -> TriMesh {
        let mut m = TriMesh::default();
        for w in points.windows(2) {
            m.append(Self::frustum(w[0], w[1], r, r, segments, false, false));
        }
        m
    }

    fn drop_degenerate(&mut self) {
        let v = &self.vertices;
        self.faces.retain(|f| triangle_area(v[f[0]], v[f[1]], v[f[2]]) > 1e-14);
    }
}

/// Parse an ASCII OFF mesh. Polygons with more than three vertices are
/// fan-triangulated from their first vertex.
pub fn load_off_mesh(text: &str) -> Result<TriMesh> {
    let bad = |line: usize, msg: &str| DataError::MalformedOff { line, msg: msg.to_string() };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let rest = header.strip_prefix("OFF").ok_or_else(|| bad(hline, "missing OFF header"))?.trim();
    // some files put the counts on the header line itself
    let (cline, counts) = if rest.is_empty() { lines.next().ok_or_else(|| bad(hline + 1, "missing counts"))? } else { (hline, rest) };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(cline, "counts must be non-negative integers"))?;
    if counts.len() < 2 || counts.len() > 3 {
        return Err(bad(cline, "expected `vertices faces [edges]`"));
    }
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| bad(cline, "fewer vertices than declared"))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, "bad vertex coordinate"))?;
        if vals.len() < 3 || vals[..3].iter().any(|x| !x.is_finite()) {
            return Err(bad(ln, "vertex needs three finite coordinates"));
        }
        vertices.push([vals[0], vals[1], vals[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| bad(cline, "fewer faces than declared"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, "bad face index"))?;
        let k = *idx.first().ok_or_else(|| bad(ln, "empty face"))?;
        // trailing color values are allowed
        if k < 3 || idx.len() < k + 1 {
            return Err(bad(ln, "face needs at least three vertex indices"));
        }
        let poly = &idx[1..=k];
        if let Some(&i) = poly.iter().find(|&&i| i >= nv) {
            return Err(bad(ln, &format!("vertex index {i} out of range")));
        }
        for t in 1..k - 1 {
            faces.push([poly[0], poly[t], poly[t + 1]]);
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(bad(ln, "unexpected trailing data"));
    }
    Ok(TriMesh { vertices, faces })
}

/// Uniform point on a triangle via square-root barycentric sampling.
pub fn sample_triangle<R: Rng + ?Sized>(a: Point3, b: Point3, c: Point3, rng: &mut R) -> Point3 {
    let s = rng.gen::<f64>().sqrt();
    let r2: f64 = rng.gen();
    let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
    [0, 1, 2].map(|d| wa * a[d] + wb * b[d] + wc * c[d])
}

/// Index of a face drawn with probability proportional to area.
pub(crate) fn pick_face<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().unwrap();
    let x = rng.gen::<f64>() * total;
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

/// Raw area-weighted surface samples (no normalization).
pub fn sample_surface_points<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Result<Vec<Point3>> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for a in mesh.face_areas() {
        acc += a;
        cumulative.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(DataError::DegenerateMesh);
    }
    Ok((0..n)
        .map(|_| {
            let f = mesh.faces[pick_face(&cumulative, rng)];
            sample_triangle(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]], rng)
        })
        .collect())
}

/// `n` area-weighted uniform surface samples, normalized to the unit sphere.
pub fn sample_surface_uniform<R: Rng + ?Sized>(
    mesh: &TriMesh,
    n: usize,
    label: usize,
    source_id: &str,
    rng: &mut R,
) -> Result<PointCloud> {
    let points = sample_surface_points(mesh, n, rng)?;
    let pc = PointCloud::new(points, label, source_id)?;
    Ok(normalize_unit_sphere(&pc)?)
}
