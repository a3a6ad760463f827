//! Procedural shape families standing in for the ten study categories.
//!
//! Every family is y-up and built from boxes, frusta, ellipsoid patches and
//! tubes with randomized proportions.

use std::f64::consts::PI;

use rand::Rng;

use super::mesh::TriMesh;

pub const CATEGORIES: [&str; 10] =
    ["airplane", "bottle", "bowl", "chair", "cup", "lamp", "person", "piano", "stool", "table"];

const SEG: usize = 16;

fn u<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

/// Random mesh of family `label` (index into [`CATEGORIES`]).
pub fn family_mesh<R: Rng + ?Sized>(label: usize, rng: &mut R) -> TriMesh {
    match label {
        0 => airplane(rng),
        1 => bottle(rng),
        2 => bowl(rng),
        3 => chair(rng),
        4 => cup(rng),
        5 => lamp(rng),
        6 => person(rng),
        7 => piano(rng),
        8 => stool(rng),
        9 => table(rng),
        _ => panic!("unknown family {label}"),
    }
}

/// Potted plant shown in the practice trial; not one of the ten families.
pub fn practice_mesh<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let rp = u(rng, 0.3, 0.4);
    let hp = u(rng, 0.4, 0.55);
    let mut m = TriMesh::frustum([0.0; 3], [0.0, hp, 0.0], rp * 0.75, rp, SEG, true, false);
    let hs = u(rng, 0.8, 1.2);
    m.append(TriMesh::cylinder([0.0, hp, 0.0], [0.0, hp + hs, 0.0], 0.025, 8));
    for i in 0..6 {
        let t = 2.0 * PI * i as f64 / 6.0 + u(rng, -0.3, 0.3);
        let y = hp + hs * (0.35 + 0.1 * i as f64);
        let len = u(rng, 0.25, 0.4);
        let (s, c) = t.sin_cos();
        m.append(TriMesh::ellipsoid([c * len, y, s * len], [len, 0.02, len * 0.35], 0.0, PI, 4, 10));
    }
    m
}

fn legs(m: &mut TriMesh, hx: f64, hz: f64, top: f64, r: f64, splay: f64, count: usize) {
    for i in 0..count {
        let (x, z) = if count == 4 {
            ([-1.0, 1.0, 1.0, -1.0][i] * hx, [-1.0, -1.0, 1.0, 1.0][i] * hz)
        } else {
            let t = 2.0 * PI * i as f64 / count as f64;
            (hx * t.cos(), hz * t.sin())
        };
        m.append(TriMesh::cylinder([x * (1.0 + splay), 0.0, z * (1.0 + splay)], [x, top, z], r, 8));
    }
}

fn airplane<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let len = u(rng, 1.6, 2.2);
    let r = u(rng, 0.08, 0.14);
    let mut m = TriMesh::frustum([-len / 2.0, 0.0, 0.0], [len / 2.0 - 0.3, 0.0, 0.0], r * 0.6, r, SEG, true, false);
    m.append(TriMesh::frustum([len / 2.0 - 0.3, 0.0, 0.0], [len / 2.0, 0.0, 0.0], r, r * 0.15, SEG, false, true));
    let chord = u(rng, 0.24, 0.44);
    let span = u(rng, 1.4, 2.2);
    let wx = u(rng, -0.15, 0.15);
    let sweep = u(rng, 0.0, 0.25);
    for s in [-1.0, 1.0] {
        m.append(TriMesh::oriented_box(
            [wx - sweep / 2.0, -r * 0.3, s * span / 4.0],
            [[chord / 2.0, 0.0, 0.0], [0.0, 0.02, 0.0], [-sweep / 2.0, 0.0, s * span / 4.0]],
        ));
    }
    let fin = u(rng, 0.3, 0.5);
    m.append(TriMesh::cuboid([-len / 2.0 + 0.12, r + fin / 2.0, 0.0], [0.12, fin / 2.0, 0.015]));
    let stab = u(rng, 0.4, 0.7);
    m.append(TriMesh::cuboid([-len / 2.0 + 0.1, 0.0, 0.0], [0.09, 0.015, stab / 2.0]));
    m
}

fn bottle<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let rb = u(rng, 0.25, 0.4);
    let hb = u(rng, 0.9, 1.3);
    let hs = u(rng, 0.15, 0.3);
    let rn = u(rng, 0.07, 0.12);
    let hn = u(rng, 0.25, 0.45);
    let mut m = TriMesh::frustum([0.0; 3], [0.0, hb, 0.0], rb, rb, SEG, true, false);
    m.append(TriMesh::frustum([0.0, hb, 0.0], [0.0, hb + hs, 0.0], rb, rn, SEG, false, false));
    m.append(TriMesh::frustum([0.0, hb + hs, 0.0], [0.0, hb + hs + hn, 0.0], rn, rn, SEG, false, true));
    m
}

fn bowl<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let r = u(rng, 0.8, 1.0);
    let depth = u(rng, 0.35, 0.6);
    let mut m = TriMesh::ellipsoid([0.0, depth, 0.0], [r, depth, r], PI / 2.0, PI, 8, 24);
    if rng.gen_bool(0.5) {
        let rf = u(rng, 0.25, 0.4);
        m.append(TriMesh::frustum([0.0, -0.06, 0.0], [0.0, 0.02, 0.0], rf, rf, SEG, true, false));
    }
    m
}

fn chair<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let w = u(rng, 0.4, 0.5);
    let d = u(rng, 0.4, 0.5);
    let h = u(rng, 0.8, 1.0);
    let back = u(rng, 0.8, 1.1);
    let mut m = TriMesh::cuboid([0.0, h, 0.0], [w, 0.04, d]);
    legs(&mut m, w - 0.04, d - 0.04, h - 0.04, 0.035, 0.0, 4);
    m.append(TriMesh::cuboid([0.0, h + back / 2.0, -d + 0.04], [w, back / 2.0, 0.04]));
    m
}

fn cup<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let r = u(rng, 0.35, 0.45);
    let h = u(rng, 0.8, 1.1);
    let taper = u(rng, 0.8, 1.0);
    let mut m = TriMesh::frustum([0.0; 3], [0.0, h, 0.0], r * taper, r, SEG, true, false);
    let hr = u(rng, 0.2, 0.3);
    let arc: Vec<[f64; 3]> = (0..=8)
        .map(|i| {
            let t = -PI / 2.0 + PI * i as f64 / 8.0;
            [r + hr * t.cos() * 0.9, h / 2.0 + hr * t.sin(), 0.0]
        })
        .collect();
    m.append(TriMesh::tube(&arc, 0.04, 8));
    m
}

fn lamp<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let rb = u(rng, 0.3, 0.45);
    let hs = u(rng, 1.0, 1.5);
    let mut m = TriMesh::frustum([0.0; 3], [0.0, 0.06, 0.0], rb, rb, SEG, true, true);
    m.append(TriMesh::cylinder([0.0, 0.06, 0.0], [0.0, hs, 0.0], 0.03, 8));
    let r0 = u(rng, 0.35, 0.5);
    let r1 = u(rng, 0.15, 0.25);
    let sh = u(rng, 0.35, 0.5);
    let base = hs - sh * 0.6;
    m.append(TriMesh::frustum([0.0, base, 0.0], [0.0, base + sh, 0.0], r0, r1, SEG, false, false));
    m
}

fn person<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let leg = u(rng, 0.8, 1.0);
    let torso = u(rng, 0.55, 0.7);
    let sw = u(rng, 0.18, 0.24);
    let mut m = TriMesh::cuboid([0.0, leg + torso / 2.0, 0.0], [sw, torso / 2.0, 0.1]);
    let head = u(rng, 0.12, 0.16);
    m.append(TriMesh::ellipsoid([0.0, leg + torso + head + 0.04, 0.0], [head; 3], 0.0, PI, 6, 12));
    for s in [-1.0, 1.0] {
        let stride = u(rng, -0.3, 0.3);
        m.append(TriMesh::tube(&[[s * 0.1, leg, 0.0], [s * 0.12, 0.0, stride]], 0.06, 8));
        let a = u(rng, 0.1, 1.0);
        let arm = u(rng, 0.6, 0.75);
        let shoulder = [s * (sw + 0.05), leg + torso - 0.05, 0.0];
        let hand = [shoulder[0] + s * arm * a.sin(), shoulder[1] - arm * a.cos(), u(rng, -0.2, 0.2)];
        m.append(TriMesh::tube(&[shoulder, hand], 0.045, 8));
    }
    m
}

fn piano<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let w = u(rng, 0.6, 0.8);
    let d = u(rng, 0.45, 0.6);
    let h = u(rng, 0.15, 0.2);
    let y = u(rng, 0.6, 0.75);
    let mut m = TriMesh::cuboid([0.0, y, 0.0], [w, h, d]);
    legs(&mut m, w - 0.06, d - 0.06, y - h, 0.04, 0.0, 4);
    // lid hinged along the back edge, propped open
    let ang = u(rng, 0.35, 0.7);
    let (s, c) = ang.sin_cos();
    let lw = d * 0.95;
    m.append(TriMesh::oriented_box(
        [0.0, y + h + lw * s, -d + lw * c],
        [[w * 0.95, 0.0, 0.0], [0.0, lw * s, lw * c], [0.0, 0.015 * c, -0.015 * s]],
    ));
    // keyboard shelf in front
    m.append(TriMesh::cuboid([0.0, y - h * 0.3, d + 0.12], [w * 0.9, 0.04, 0.12]));
    m
}

fn stool<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let r = u(rng, 0.3, 0.4);
    let h = u(rng, 0.9, 1.2);
    let mut m = TriMesh::frustum([0.0, h - 0.06, 0.0], [0.0, h, 0.0], r, r, SEG, true, true);
    let n = if rng.gen_bool(0.5) { 3 } else { 4 };
    let splay = u(rng, 0.1, 0.35);
    legs(&mut m, r * 0.8, r * 0.8, h - 0.06, 0.03, splay, n);
    let ring = r * 0.8 * (1.0 + splay * 0.6);
    m.append(TriMesh::frustum([0.0, h * 0.35, 0.0], [0.0, h * 0.35 + 0.03, 0.0], ring, ring, SEG, false, false));
    m
}

fn table<R: Rng + ?Sized>(rng: &mut R) -> TriMesh {
    let w = u(rng, 0.7, 1.0);
    let d = u(rng, 0.4, 0.55);
    let h = u(rng, 0.7, 0.9);
    let mut m = TriMesh::cuboid([0.0, h, 0.0], [w, 0.03, d]);
    legs(&mut m, w - 0.06, d - 0.06, h - 0.03, 0.04, 0.0, 4);
    m
}
