//! EdgeConv, Point Transformer layer and Transition Down over batched
//! activations.
//!
//! A batch holds `B` clouds of equal size `M`; features are stored as a
//! `[B*M, D]` graph variable, cloud-major, and positions per cloud.

use rand::Rng;

use super::{ModelError, Result};
use crate::autodiff::{Graph, ParamStore, Real, Tensor, Var};
use crate::exec::ExecMode;
use crate::geometry::{farthest_point_sample, knn, knn_points, Point3};

/// Positions and features at the current resolution.
pub struct LayerActivation {
    pub positions: Vec<Vec<Point3>>,
    pub features: Var,
}

impl LayerActivation {
    pub fn batch(&self) -> usize {
        self.positions.len()
    }

    pub fn points(&self) -> usize {
        self.positions[0].len()
    }
}

pub(crate) struct ParamBuilder<'a, T: Real, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Real, R: Rng> ParamBuilder<'_, T, R> {
    /// Uniform init with variance 1/fan_in.
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> usize {
        let bound = (3.0 / fan_in as f64).sqrt();
        let data: Vec<T> = (0..fan_in * fan_out).map(|_| T::of(self.rng.gen_range(-bound..bound))).collect();
        self.store.add_param(name, Tensor::new(vec![fan_in, fan_out], data).expect("positive dims"))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let w = self.weight(&format!("{name}.weight"), fan_in, fan_out);
        let b = bias.then(|| self.store.add_param(&format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear { w, b }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.store.add_param(&format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: self.store.add_param(&format!("{name}.beta"), Tensor::zeros(&[dim])),
            mean: self.store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[dim])),
            var: self.store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[dim], T::one())),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let mut y = g.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = g.param(store, b);
            y = g.add(y, b)?;
        }
        Ok(y)
    }
}

/// Batch-norm parameters; the running-mean buffer id doubles as the stats slot.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

impl Norm {
    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let running = (store.get(self.mean).tensor.data(), store.get(self.var).tensor.data());
        Ok(g.batch_norm(x, gamma, beta, self.mean, running)?)
    }
}

/// Linear -> batch norm -> relu.
pub(crate) fn lin_bn_relu<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    lin: &Linear,
    norm: &Norm,
    x: Var,
) -> Result<Var> {
    let y = lin.apply(g, store, x)?;
    let y = norm.apply(g, store, y)?;
    Ok(g.relu(y))
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(ModelError::Geometry(crate::geometry::GeometryError::KTooLarge { k, n: m }));
    }
    Ok(())
}

/// Query index repeated `k` times per row, offset per cloud: `[0,0,..,1,1,..]`.
fn center_index(batch: usize, m: usize, k: usize) -> Vec<usize> {
    (0..batch * m).flat_map(|i| std::iter::repeat(i).take(k)).collect()
}

// ------------------------------------------------------------------ EdgeConv

/// `e_ij = W [x_i, x_j - x_i]` with `W = [top; bottom]`, followed by batch norm,
/// relu and a max over the `k` neighbors.
#[derive(Clone, Copy, Debug)]
pub struct EdgeConv {
    /// Rows of `W` multiplying `x_i`.
    pub w_top: usize,
    /// Rows of `W` multiplying `x_j - x_i`.
    pub w_bottom: usize,
    pub norm: Norm,
}

impl EdgeConv {
    pub(crate) fn build<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, d_in: usize, d_out: usize) -> Self {
        // one 2*d_in x d_out matrix, stored as its two row blocks
        let bound = (3.0 / (2 * d_in) as f64).sqrt();
        let mut block = |suffix: &str| {
            let data: Vec<T> = (0..d_in * d_out).map(|_| T::of(b.rng.gen_range(-bound..bound))).collect();
            b.store.add_param(&format!("{name}.{suffix}"), Tensor::new(vec![d_in, d_out], data).expect("dims"))
        };
        let w_top = block("weight_top");
        let w_bottom = block("weight_bottom");
        EdgeConv { w_top, w_bottom, norm: b.norm(&format!("{name}.bn"), d_out) }
    }
}

/// Dynamic-graph EdgeConv: neighbors come from the current feature space.
pub fn edge_conv<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    act: &LayerActivation,
    k: usize,
    layer: &EdgeConv,
    mode: ExecMode,
) -> Result<LayerActivation> {
    let (batch, m) = (act.batch(), act.points());
    check_k(k, m)?;
    let d = g.value(act.features).cols();
    let mut neighbor = Vec::with_capacity(batch * m * k);
    {
        let feats = g.value(act.features).data();
        for b in 0..batch {
            let rows = &feats[b * m * d..(b + 1) * m * d];
            let nl = knn(rows, rows, d, k, mode)?;
            neighbor.extend(nl.indices.iter().map(|&j| j + b * m));
        }
    }
    let centers = center_index(batch, m, k);
    // x_i (W_top - W_bottom) + x_j W_bottom
    let wt = g.param(store, layer.w_top);
    let wb = g.param(store, layer.w_bottom);
    let w_self = g.sub(wt, wb)?;
    let p = g.matmul(act.features, w_self)?;
    let q = g.matmul(act.features, wb)?;
    let pi = g.gather(p, &centers)?;
    let qj = g.gather(q, &neighbor)?;
    let e = g.add(pi, qj)?;
    let e = layer.norm.apply(g, store, e)?;
    let e = g.relu(e);
    let d_out = g.value(e).cols();
    let e = g.reshape(e, &[batch * m, k, d_out])?;
    let features = g.max_reduce(e, 1)?;
    Ok(LayerActivation { positions: act.positions.clone(), features })
}

// -------------------------------------------------------- Point Transformer

#[derive(Clone, Copy, Debug)]
pub struct PointTransformerBlock {
    pub lin_in: Linear,
    pub norm_in: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub pos1: Linear,
    pub pos2: Linear,
    pub attn1: Linear,
    pub attn2: Linear,
    pub norm_mid: Norm,
    pub lin_out: Linear,
    pub norm_out: Norm,
}

impl PointTransformerBlock {
    pub(crate) fn build<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, dim: usize) -> Self {
        PointTransformerBlock {
            lin_in: b.linear(&format!("{name}.lin_in"), dim, dim, false),
            norm_in: b.norm(&format!("{name}.bn_in"), dim),
            query: b.linear(&format!("{name}.query"), dim, dim, true),
            key: b.linear(&format!("{name}.key"), dim, dim, true),
            value: b.linear(&format!("{name}.value"), dim, dim, true),
            pos1: b.linear(&format!("{name}.pos1"), 3, dim, true),
            pos2: b.linear(&format!("{name}.pos2"), dim, dim, true),
            attn1: b.linear(&format!("{name}.attn1"), dim, dim, true),
            attn2: b.linear(&format!("{name}.attn2"), dim, dim, true),
            norm_mid: b.norm(&format!("{name}.bn_mid"), dim),
            lin_out: b.linear(&format!("{name}.lin_out"), dim, dim, false),
            norm_out: b.norm(&format!("{name}.bn_out"), dim),
        }
    }
}

/// Vector self-attention over the `k` nearest neighbors in 3D space.
///
/// `w_ij = softmax_j(gamma(q_i - k_j + delta_ij))`, `y_i = sum_j w_ij * (v_j + delta_ij)`
/// with `delta_ij = pos(p_i - p_j)`. Without attention the weights are 1/k;
/// without position encoding `delta` is zero on both paths.
#[allow(clippy::too_many_arguments)]
pub fn point_transformer_layer<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    act: &LayerActivation,
    k: usize,
    block: &PointTransformerBlock,
    use_attention: bool,
    use_position_encoding: bool,
    mode: ExecMode,
) -> Result<LayerActivation> {
    let (batch, m) = (act.batch(), act.points());
    check_k(k, m)?;
    let mut neighbor = Vec::with_capacity(batch * m * k);
    let mut rel = Vec::with_capacity(batch * m * k * 3);
    for (b, pos) in act.positions.iter().enumerate() {
        let nl = knn_points(pos, pos, k, mode)?;
        for (i, row) in nl.rows().enumerate() {
            for &j in row {
                neighbor.push(j + b * m);
                for c in 0..3 {
                    rel.push(T::of(pos[i][c] - pos[j][c]));
                }
            }
        }
    }
    let centers = center_index(batch, m, k);
    let x = act.features;
    let h = lin_bn_relu(g, store, &block.lin_in, &block.norm_in, x)?;
    let dim = g.value(h).cols();

    let delta = if use_position_encoding {
        let r = g.constant(Tensor::new(vec![batch * m * k, 3], rel)?);
        let p = block.pos1.apply(g, store, r)?;
        let p = g.relu(p);
        Some(block.pos2.apply(g, store, p)?)
    } else {
        None
    };

    let v = block.value.apply(g, store, h)?;
    let mut vj = g.gather(v, &neighbor)?;
    if let Some(dl) = delta {
        vj = g.add(vj, dl)?;
    }
    let vj = g.reshape(vj, &[batch * m, k, dim])?;

    let y = if use_attention {
        let q = block.query.apply(g, store, h)?;
        let kk = block.key.apply(g, store, h)?;
        let qi = g.gather(q, &centers)?;
        let kj = g.gather(kk, &neighbor)?;
        let mut a = g.sub(qi, kj)?;
        if let Some(dl) = delta {
            a = g.add(a, dl)?;
        }
        let a = block.attn1.apply(g, store, a)?;
        let a = g.relu(a);
        let a = block.attn2.apply(g, store, a)?;
        let a = g.reshape(a, &[batch * m, k, dim])?;
        let w = g.softmax(a, 1)?;
        let wv = g.mul(w, vj)?;
        g.sum_reduce(wv, 1)?
    } else {
        g.mean_reduce(vj, 1)?
    };

    let y = block.norm_mid.apply(g, store, y)?;
    let y = g.relu(y);
    let y = block.lin_out.apply(g, store, y)?;
    let y = block.norm_out.apply(g, store, y)?;
    let y = g.add(y, x)?;
    let features = g.relu(y);
    Ok(LayerActivation { positions: act.positions.clone(), features })
}

// ----------------------------------------------------------- Transition Down

#[derive(Clone, Copy, Debug)]
pub struct TransitionDown {
    pub lin: Linear,
    pub norm: Norm,
}

impl TransitionDown {
    pub(crate) fn build<T: Real, R: Rng>(b: &mut ParamBuilder<'_, T, R>, name: &str, d_in: usize, d_out: usize) -> Self {
        TransitionDown { lin: b.linear(&format!("{name}.lin"), d_in, d_out, false), norm: b.norm(&format!("{name}.bn"), d_out) }
    }
}

/// Farthest-point-sample `ceil(M / stride)` centers, then max-pool the MLP
/// features of each center's `k` nearest original points.
pub fn transition_down<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    act: &LayerActivation,
    stride: usize,
    k: usize,
    layer: &TransitionDown,
    mode: ExecMode,
) -> Result<LayerActivation> {
    let (batch, m) = (act.batch(), act.points());
    if stride == 0 {
        return Err(ModelError::InvalidSpec("stride must be positive".into()));
    }
    check_k(k, m)?;
    let m_out = m.div_ceil(stride);
    let mut neighbor = Vec::with_capacity(batch * m_out * k);
    let mut positions = Vec::with_capacity(batch);
    for (b, pos) in act.positions.iter().enumerate() {
        let centers: Vec<Point3> = farthest_point_sample(pos, m_out)?.into_iter().map(|i| pos[i]).collect();
        let nl = knn_points(&centers, pos, k, mode)?;
        neighbor.extend(nl.indices.iter().map(|&j| j + b * m));
        positions.push(centers);
    }
    let f = g.gather(act.features, &neighbor)?;
    let f = lin_bn_relu(g, store, &layer.lin, &layer.norm, f)?;
    let d_out = g.value(f).cols();
    let f = g.reshape(f, &[batch * m_out, k, d_out])?;
    let features = g.max_reduce(f, 1)?;
    Ok(LayerActivation { positions, features })
}

/// Stand-in for [`transition_down`] when downsampling is disabled: the same
/// width change applied pointwise, resolution unchanged.
pub fn pointwise_transition<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    act: &LayerActivation,
    layer: &TransitionDown,
) -> Result<LayerActivation> {
    let features = lin_bn_relu(g, store, &layer.lin, &layer.norm, act.features)?;
    Ok(LayerActivation { positions: act.positions.clone(), features })
}
