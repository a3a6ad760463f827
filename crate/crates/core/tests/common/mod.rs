#![allow(dead_code)]

use pointlab::autodiff::{Graph, Mode, ParamStore, Tensor, BN_EPS};
use pointlab::geometry::Point3;
use pointlab::models::{Family, Model, ModelSpec, Variant};
use pointlab::rng::seeded;
use rand::Rng;

pub fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = seeded(seed);
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

/// Width-8 model for gradient and oracle checks.
pub fn tiny_spec(v: Variant, k: usize) -> ModelSpec {
    let mut s = ModelSpec::for_variant(v, 5).uniform_width(8);
    s.k_neighbors = k;
    s.points_in = 16;
    s
}

/// Model with every parameter and buffer randomized, so that biases,
/// batch-norm affine terms and running statistics all matter.
pub fn randomized_model(spec: ModelSpec, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(spec, &mut seeded(seed)).unwrap();
    let mut rng = seeded(seed ^ 0x5eed);
    let n = m.params.len();
    for id in 0..n {
        let name = m.params.get(id).name.clone();
        for x in m.params.get_mut(id).tensor.data_mut() {
            if name.ends_with("running_var") {
                *x = rng.gen_range(0.5..1.5);
            } else if name.ends_with("gamma") {
                *x = rng.gen_range(0.5..1.5);
            } else if name.ends_with("running_mean") || name.ends_with("beta") || name.ends_with("bias") {
                *x = rng.gen_range(-0.2..0.2);
            }
        }
    }
    m
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

fn loss(model: &Model<f64>, clouds: &[&[Point3]], labels: &[usize], mode: Mode) -> (f64, Graph<f64>, pointlab::autodiff::Var) {
    let mut g = Graph::new(mode);
    let logits = model.forward(&mut g, clouds, None).unwrap();
    let l = g.cross_entropy(logits, labels).unwrap();
    (g.value(l).data()[0], g, l)
}

/// Analytic vs central-difference gradient of the cross-entropy loss over
/// every trainable scalar; returns the norm-wise relative error.
pub fn model_gradient_error(model: &mut Model<f64>, clouds: &[&[Point3]], labels: &[usize], mode: Mode) -> f64 {
    let (_, mut g, l) = loss(model, clouds, labels, mode);
    g.backward(l).unwrap();
    let grads = g.param_grads(model.params.len());
    let h = 1e-5;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in 0..model.params.len() {
        if !model.params.get(id).trainable {
            continue;
        }
        let n = model.params.get(id).tensor.numel();
        for i in 0..n {
            analytic.push(grads[id].as_ref().map_or(0.0, |v| v[i]));
            let x0 = model.params.get(id).tensor.data()[i];
            model.params.get_mut(id).tensor.data_mut()[i] = x0 + h;
            let up = loss(model, clouds, labels, mode).0;
            model.params.get_mut(id).tensor.data_mut()[i] = x0 - h;
            let down = loss(model, clouds, labels, mode).0;
            model.params.get_mut(id).tensor.data_mut()[i] = x0;
            numeric.push((up - down) / (2.0 * h));
            if std::env::var("GRAD_DEBUG").is_ok() {
                let (a, n) = (analytic[analytic.len() - 1], numeric[numeric.len() - 1]);
                if (a - n).abs() > 1e-6 {
                    eprintln!("{} [{i}]: {a} vs {n}", model.params.get(id).name);
                }
            }
        }
    }
    rel_err(&analytic, &numeric)
}

// ---------------------------------------------------------------------------
// Straight-line reference forward (eval mode, f64, explicit loops).

pub struct Ref<'a> {
    pub p: &'a ParamStore<f64>,
}

type Rows = Vec<Vec<f64>>;

impl Ref<'_> {
    fn t(&self, name: &str) -> &Tensor<f64> {
        &self.p.get(self.p.id(name).unwrap_or_else(|| panic!("missing {name}"))).tensor
    }

    pub fn linear(&self, x: &[f64], name: &str) -> Vec<f64> {
        let w = self.t(&format!("{name}.weight"));
        let (din, dout) = (w.shape()[0], w.shape()[1]);
        assert_eq!(x.len(), din);
        let mut y = vec![0.0; dout];
        for o in 0..dout {
            for i in 0..din {
                y[o] += x[i] * w.data()[i * dout + o];
            }
        }
        if let Some(id) = self.p.id(&format!("{name}.bias")) {
            for (yo, b) in y.iter_mut().zip(self.p.get(id).tensor.data()) {
                *yo += b;
            }
        }
        y
    }

    pub fn bn(&self, x: &[f64], name: &str) -> Vec<f64> {
        let g = self.t(&format!("{name}.gamma")).data();
        let b = self.t(&format!("{name}.beta")).data();
        let m = self.t(&format!("{name}.running_mean")).data();
        let v = self.t(&format!("{name}.running_var")).data();
        (0..x.len()).map(|j| g[j] * (x[j] - m[j]) / (v[j] + BN_EPS).sqrt() + b[j]).collect()
    }

    pub fn lbr(&self, x: &[f64], lin: &str, bn: &str) -> Vec<f64> {
        relu(&self.bn(&self.linear(x, lin), bn))
    }

    /// `concat(x_i, x_j - x_i)` through the stacked weight, per edge.
    pub fn edge_conv(&self, x: &Rows, k: usize, name: &str) -> Rows {
        let top = self.t(&format!("{name}.weight_top"));
        let bot = self.t(&format!("{name}.weight_bottom"));
        let (din, dout) = (top.shape()[0], top.shape()[1]);
        let nbrs = brute_knn(x, x, k);
        let mut out = Vec::new();
        for (i, row) in nbrs.iter().enumerate() {
            let mut best = vec![f64::NEG_INFINITY; dout];
            for &j in row {
                let mut cat = x[i].clone();
                cat.extend((0..din).map(|c| x[j][c] - x[i][c]));
                let mut e = vec![0.0; dout];
                for o in 0..dout {
                    for c in 0..din {
                        e[o] += cat[c] * top.data()[c * dout + o] + cat[din + c] * bot.data()[c * dout + o];
                    }
                }
                let e = relu(&self.bn(&e, &format!("{name}.bn")));
                for o in 0..dout {
                    best[o] = best[o].max(e[o]);
                }
            }
            out.push(best);
        }
        out
    }

    pub fn pt_layer(&self, x: &Rows, pos: &[Point3], k: usize, name: &str, attn: bool, pe: bool) -> Rows {
        let n = |s: &str| format!("{name}.{s}");
        let h: Rows = x.iter().map(|r| self.lbr(r, &n("lin_in"), &n("bn_in"))).collect();
        let q: Rows = h.iter().map(|r| self.linear(r, &n("query"))).collect();
        let kk: Rows = h.iter().map(|r| self.linear(r, &n("key"))).collect();
        let v: Rows = h.iter().map(|r| self.linear(r, &n("value"))).collect();
        let prow: Rows = pos.iter().map(|p| p.to_vec()).collect();
        let nbrs = brute_knn(&prow, &prow, k);
        let dim = h[0].len();
        let mut out = Vec::new();
        for (i, row) in nbrs.iter().enumerate() {
            let mut logits = Vec::new();
            let mut vals = Vec::new();
            for &j in row {
                let delta = if pe {
                    let r: Vec<f64> = (0..3).map(|c| pos[i][c] - pos[j][c]).collect();
                    self.linear(&relu(&self.linear(&r, &n("pos1"))), &n("pos2"))
                } else {
                    vec![0.0; dim]
                };
                let a: Vec<f64> = (0..dim).map(|c| q[i][c] - kk[j][c] + delta[c]).collect();
                logits.push(self.linear(&relu(&self.linear(&a, &n("attn1"))), &n("attn2")));
                vals.push((0..dim).map(|c| v[j][c] + delta[c]).collect::<Vec<f64>>());
            }
            let mut y = vec![0.0; dim];
            for c in 0..dim {
                if attn {
                    let mx = logits.iter().map(|l| l[c]).fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|l| (l[c] - mx).exp()).sum();
                    for (l, val) in logits.iter().zip(&vals) {
                        y[c] += (l[c] - mx).exp() / z * val[c];
                    }
                } else {
                    y[c] = vals.iter().map(|val| val[c]).sum::<f64>() / row.len() as f64;
                }
            }
            let y = relu(&self.bn(&y, &n("bn_mid")));
            let y = self.bn(&self.linear(&y, &n("lin_out")), &n("bn_out"));
            out.push(relu(&(0..dim).map(|c| y[c] + x[i][c]).collect::<Vec<f64>>()));
        }
        out
    }

    pub fn transition_down(&self, x: &Rows, pos: &[Point3], stride: usize, k: usize, name: &str) -> (Rows, Vec<Point3>) {
        let m_out = pos.len().div_ceil(stride);
        let centers: Vec<Point3> = brute_fps(pos, m_out).into_iter().map(|i| pos[i]).collect();
        let crow: Rows = centers.iter().map(|p| p.to_vec()).collect();
        let prow: Rows = pos.iter().map(|p| p.to_vec()).collect();
        let nbrs = brute_knn(&crow, &prow, k);
        let feats = nbrs
            .iter()
            .map(|row| {
                let mut best: Option<Vec<f64>> = None;
                for &j in row {
                    let f = self.lbr(&x[j], &format!("{name}.lin"), &format!("{name}.bn"));
                    best = Some(match best {
                        None => f,
                        Some(b) => b.iter().zip(&f).map(|(a, c)| a.max(*c)).collect(),
                    });
                }
                best.unwrap()
            })
            .collect();
        (feats, centers)
    }

    pub fn logits(&self, spec: &ModelSpec, pts: &[Point3]) -> Vec<f64> {
        let kk = |m: usize| spec.k_neighbors.min(m);
        let pooled = match spec.family {
            Family::Dgcnn => {
                let mut x: Rows = pts.iter().map(|p| p.to_vec()).collect();
                let mut pos = pts.to_vec();
                let mut outs: Vec<Rows> = Vec::new();
                for s in 0..4 {
                    x = self.edge_conv(&x, kk(x.len()), &format!("stage{s}.edge"));
                    outs.push(x.clone());
                    if spec.use_downsampling {
                        let (f, p) = self.transition_down(&x, &pos, spec.downsample_stride, kk(x.len()), &format!("stage{s}.down"));
                        x = f;
                        pos = p;
                    }
                }
                let feats: Rows = if spec.use_downsampling {
                    x
                } else {
                    (0..pts.len()).map(|i| outs.iter().flat_map(|o| o[i].clone()).collect()).collect()
                };
                let e: Rows = feats.iter().map(|r| self.lbr(r, "embed", "embed.bn")).collect();
                let d = e[0].len();
                let mut pool: Vec<f64> = (0..d).map(|c| e.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max)).collect();
                pool.extend((0..d).map(|c| e.iter().map(|r| r[c]).sum::<f64>() / e.len() as f64));
                pool
            }
            Family::PointTransformer => {
                let c = centroid(pts);
                let mut x: Rows =
                    pts.iter().map(|p| self.lbr(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]], "stem", "stem.bn")).collect();
                let mut pos = pts.to_vec();
                for s in 0..4 {
                    x = self.pt_layer(&x, &pos, kk(x.len()), &format!("stage{s}.attn"), spec.use_attention, spec.use_position_encoding);
                    if spec.use_downsampling {
                        let (f, p) = self.transition_down(&x, &pos, spec.downsample_stride, kk(x.len()), &format!("stage{s}.down"));
                        x = f;
                        pos = p;
                    } else {
                        x = x.iter().map(|r| self.lbr(r, &format!("stage{s}.down.lin"), &format!("stage{s}.down.bn"))).collect();
                    }
                }
                let d = x[0].len();
                (0..d).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / x.len() as f64).collect()
            }
        };
        let mut h = pooled;
        for i in 0..spec.head_widths.len() {
            h = self.lbr(&h, &format!("head{i}"), &format!("head{i}.bn"));
        }
        self.linear(&h, "classifier")
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn centroid(pts: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in pts {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|v| v / pts.len() as f64)
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Full sort by (distance, index).
pub fn brute_knn(query: &Rows, reference: &Rows, k: usize) -> Vec<Vec<usize>> {
    query
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = reference.iter().enumerate().map(|(j, r)| (d2(q, r), j)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Exhaustive FPS: recompute every set distance from scratch each round.
pub fn brute_fps(pts: &[Point3], m: usize) -> Vec<usize> {
    let c = centroid(pts);
    let first = (0..pts.len()).fold(0, |b, i| if d2(&pts[i], &c) > d2(&pts[b], &c) { i } else { b });
    let mut chosen = vec![first];
    while chosen.len() < m {
        let score = |i: usize| chosen.iter().map(|&s| d2(&pts[i], &pts[s])).fold(f64::INFINITY, f64::min);
        let next = (0..pts.len()).fold(0, |b, i| if score(i) > score(b) { i } else { b });
        chosen.push(next);
    }
    chosen
}
