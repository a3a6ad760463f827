//! Plain-text point cloud format.
//!
//! ```text
//! N label source_id up_axis
//! x y z
//! ...
//! ```
//! Coordinates are written with 17 significant digits, which round-trips
//! every `f64` exactly.

use std::io::{BufRead, Write};

use super::{GeometryError, PointCloud, Result};

pub fn write_point_cloud<W: Write>(pc: &PointCloud, mut w: W) -> Result<()> {
    if pc.source_id.is_empty() || pc.source_id.chars().any(char::is_whitespace) {
        return Err(GeometryError::Parse {
            line: 0,
            msg: format!("source_id {:?} must be non-empty without whitespace", pc.source_id),
        });
    }
    writeln!(w, "{} {} {} {}", pc.len(), pc.label, pc.source_id, pc.up_axis)?;
    for p in &pc.points {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, msg: msg.into() }
}

pub fn read_point_cloud<R: BufRead>(r: R) -> Result<PointCloud> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(1, "header must be `N label source_id up_axis`"));
    }
    let n: usize = fields[0].parse().map_err(|_| parse_err(1, "bad point count"))?;
    let label: usize = fields[1].parse().map_err(|_| parse_err(1, "bad label"))?;
    let up_axis: usize = fields[3].parse().map_err(|_| parse_err(1, "bad up axis"))?;
    let mut points = Vec::with_capacity(n);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        if vals.len() != 3 {
            return Err(parse_err(i + 1, format!("expected 3 coordinates, got {}", vals.len())));
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    if points.len() != n {
        return Err(parse_err(1, format!("header says {} points, found {}", n, points.len())));
    }
    PointCloud::new(points, label, fields[2])?.with_up_axis(up_axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            pts in proptest::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..40),
            label in 0usize..40,
            up in 0usize..3,
        ) {
            let pc = PointCloud::new(pts, label, "obj_7").unwrap().with_up_axis(up).unwrap();
            let mut buf = Vec::new();
            write_point_cloud(&pc, &mut buf).unwrap();
            let back = read_point_cloud(&buf[..]).unwrap();
            prop_assert_eq!(back, pc);
        }
    }

    #[test]
    fn count_mismatch() {
        let text = "3 0 a 1\n0 0 0\n1 1 1\n";
        assert!(matches!(read_point_cloud(text.as_bytes()), Err(GeometryError::Parse { line: 1, .. })));
        let text = "1 0 a 1\n0 zero 0\n";
        assert!(matches!(read_point_cloud(text.as_bytes()), Err(GeometryError::Parse { line: 2, .. })));
    }
}
