//! DGCNN and Point Transformer classifiers, their ablation variants and the
//! DGCNN + downsampling hybrid, all driven by one [`ModelSpec`].

mod layers;
mod spec;

pub use layers::{
    edge_conv, point_transformer_layer, pointwise_transition, transition_down, EdgeConv, LayerActivation, Linear,
    Norm, PointTransformerBlock, TransitionDown,
};
pub use spec::{Family, ModelSpec, Variant};

use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{checkpoint, AutodiffError, Graph, Mode, ParamStore, Real, Tensor, Var};
use crate::exec::ExecMode;
use crate::geometry::{GeometryError, Point3, PointCloud};
use layers::{lin_bn_relu, ParamBuilder};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cloud has {got} points; model needs at least {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("bad category subset: {0}")]
    BadSubset(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("all clouds in a batch must have the same size")]
    RaggedBatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// One record per layer boundary, reported to an instrumentation hook.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    /// Points per cloud at this layer's output.
    pub points: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
struct HeadLayer {
    lin: Linear,
    norm: Norm,
}

#[derive(Clone, Debug)]
enum Body {
    Dgcnn { stages: Vec<EdgeConv>, downs: Vec<TransitionDown>, embed: Linear, embed_norm: Norm },
    PointTransformer { stem: Linear, stem_norm: Norm, blocks: Vec<PointTransformerBlock>, downs: Vec<TransitionDown> },
}

/// A classifier: spec, parameters and the parameter layout.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    body: Body,
    head: Vec<HeadLayer>,
    out: Linear,
    pub exec: ExecMode,
}

impl<T: Real> Model<T> {
    /// Fresh randomly initialized model. Every variant of a family allocates
    /// the same parameters in the same order, so equal seeds give equal
    /// shared weights across variants.
    pub fn new<R: Rng>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut b = ParamBuilder { store: &mut params, rng };
        let w = &spec.layer_widths;
        let (body, pooled) = match spec.family {
            Family::Dgcnn => {
                let mut stages = Vec::new();
                let mut downs = Vec::new();
                let mut d_in = 3;
                for s in 0..4 {
                    stages.push(EdgeConv::build(&mut b, &format!("stage{s}.edge"), d_in, w[s]));
                    downs.push(TransitionDown::build(&mut b, &format!("stage{s}.down"), w[s], w[s]));
                    d_in = w[s];
                }
                let cat: usize = w[..4].iter().sum();
                let embed_in = if spec.use_downsampling { w[3] } else { cat };
                let embed = b.linear("embed", embed_in, w[4], false);
                let embed_norm = b.norm("embed.bn", w[4]);
                (Body::Dgcnn { stages, downs, embed, embed_norm }, 2 * w[4])
            }
            Family::PointTransformer => {
                let stem = b.linear("stem", 3, w[0], false);
                let stem_norm = b.norm("stem.bn", w[0]);
                let mut blocks = Vec::new();
                let mut downs = Vec::new();
                for s in 0..4 {
                    blocks.push(PointTransformerBlock::build(&mut b, &format!("stage{s}.attn"), w[s]));
                    downs.push(TransitionDown::build(&mut b, &format!("stage{s}.down"), w[s], w[s + 1]));
                }
                (Body::PointTransformer { stem, stem_norm, blocks, downs }, w[4])
            }
        };
        let mut head = Vec::new();
        let mut d = pooled;
        for (i, &hw) in spec.head_widths.iter().enumerate() {
            head.push(HeadLayer {
                lin: b.linear(&format!("head{i}"), d, hw, false),
                norm: b.norm(&format!("head{i}.bn"), hw),
            });
            d = hw;
        }
        let out = b.linear("classifier", d, spec.num_classes, true);
        Ok(Model { spec, params, body, head, out, exec: ExecMode::auto() })
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    /// Logits `[B, num_classes]` for a batch of equally sized clouds.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        clouds: &[&[Point3]],
        mut hook: Option<&mut dyn FnMut(LayerInfo)>,
    ) -> Result<Var> {
        let batch = clouds.len();
        let m = clouds.first().map(|c| c.len()).ok_or(ModelError::RaggedBatch)?;
        if clouds.iter().any(|c| c.len() != m) {
            return Err(ModelError::RaggedBatch);
        }
        if m < self.spec.min_points() {
            return Err(ModelError::TooFewPoints { got: m, need: self.spec.min_points() });
        }
        // PT features start from centroid offsets; DGCNN sees raw coordinates
        let mut coords: Vec<T> = Vec::with_capacity(batch * m * 3);
        for c in clouds {
            let o = match self.spec.family {
                Family::PointTransformer => crate::geometry::centroid(c),
                Family::Dgcnn => [0.0; 3],
            };
            coords.extend(c.iter().flat_map(|p| (0..3).map(move |a| T::of(p[a] - o[a]))));
        }
        let x0 = g.constant(Tensor::new(vec![batch * m, 3], coords)?);
        let mut act = LayerActivation { positions: clouds.iter().map(|c| c.to_vec()).collect(), features: x0 };
        let mut report = |name: String, a: &LayerActivation, g: &Graph<T>| {
            if let Some(h) = hook.as_mut() {
                h(LayerInfo { name, points: a.points(), width: g.value(a.features).cols() });
            }
        };
        report("input".into(), &act, g);
        let spec = &self.spec;
        let k = spec.k_neighbors;
        let store = &self.params;

        let global = match &self.body {
            Body::Dgcnn { stages, downs, embed, embed_norm } => {
                let mut outs = Vec::new();
                for (s, stage) in stages.iter().enumerate() {
                    act = edge_conv(g, store, &act, k.min(act.points()), stage, self.exec)?;
                    report(format!("stage{s}.edge"), &act, g);
                    outs.push(act.features);
                    if spec.use_downsampling {
                        act = transition_down(g, store, &act, spec.downsample_stride, k.min(act.points()), &downs[s], self.exec)?;
                        report(format!("stage{s}.down"), &act, g);
                    }
                }
                let feats = if spec.use_downsampling { act.features } else { g.concat(&outs, 1)? };
                lin_bn_relu(g, store, embed, embed_norm, feats)?
            }
            Body::PointTransformer { stem, stem_norm, blocks, downs } => {
                act.features = lin_bn_relu(g, store, stem, stem_norm, act.features)?;
                report("stem".into(), &act, g);
                for (s, block) in blocks.iter().enumerate() {
                    act = point_transformer_layer(
                        g,
                        store,
                        &act,
                        k.min(act.points()),
                        block,
                        spec.use_attention,
                        spec.use_position_encoding,
                        self.exec,
                    )?;
                    report(format!("stage{s}.attn"), &act, g);
                    act = if spec.use_downsampling {
                        transition_down(g, store, &act, spec.downsample_stride, k.min(act.points()), &downs[s], self.exec)?
                    } else {
                        pointwise_transition(g, store, &act, &downs[s])?
                    };
                    report(format!("stage{s}.down"), &act, g);
                }
                act.features
            }
        };

        let m_final = act.points();
        let width = g.value(global).cols();
        let grouped = g.reshape(global, &[batch, m_final, width])?;
        let mut h = match spec.family {
            Family::Dgcnn => {
                let mx = g.max_reduce(grouped, 1)?;
                let mean = g.mean_reduce(grouped, 1)?;
                g.concat(&[mx, mean], 1)?
            }
            Family::PointTransformer => g.mean_reduce(grouped, 1)?,
        };
        for layer in &self.head {
            h = lin_bn_relu(g, store, &layer.lin, &layer.norm, h)?;
        }
        self.out.apply(g, store, h)
    }

    /// Eval-mode logits for one cloud.
    pub fn logits(&self, pc: &PointCloud) -> Result<Vec<f64>> {
        let mut g = Graph::new(Mode::Eval);
        let out = self.forward(&mut g, &[&pc.points], None)?;
        Ok(g.value(out).to_f64_vec())
    }

    /// Eval-mode forward that reports every layer's resolution.
    pub fn trace(&self, pc: &PointCloud) -> Result<Vec<LayerInfo>> {
        let mut g = Graph::new(Mode::Eval);
        let mut infos = Vec::new();
        let mut hook = |i: LayerInfo| infos.push(i);
        self.forward(&mut g, &[&pc.points], Some(&mut hook))?;
        Ok(infos)
    }

    /// Fold the batch statistics observed in a training graph into the
    /// running buffers: `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, g: &Graph<T>, momentum: f64) {
        let mom = T::of(momentum);
        for st in g.batch_stats() {
            let var_id = self.params.id(&self.params.get(st.slot).name.replace("running_mean", "running_var"));
            let mean = self.params.get_mut(st.slot).tensor.data_mut();
            for (r, &b) in mean.iter_mut().zip(&st.mean) {
                *r = (T::one() - mom) * *r + mom * b;
            }
            if let Some(v) = var_id {
                let var = self.params.get_mut(v).tensor.data_mut();
                for (r, &b) in var.iter_mut().zip(&st.var) {
                    *r = (T::one() - mom) * *r + mom * b;
                }
            }
        }
    }

    pub fn save_weights<W: Write>(&self, w: W) -> Result<()> {
        Ok(checkpoint::save(&self.params, w)?)
    }

    pub fn load_weights<R: Read>(&mut self, r: R) -> Result<()> {
        let named = checkpoint::load::<T, _>(r)?;
        Ok(self.params.assign(&named)?)
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            body: self.body.clone(),
            head: self.head.clone(),
            out: self.out,
            exec: self.exec,
        }
    }
}

/// Logits restricted to a category subset, with the decision among them.
#[derive(Clone, Debug, PartialEq)]
pub struct Restricted {
    pub logits: Vec<f64>,
    /// Position of the winner inside the subset.
    pub position: usize,
    /// Class id of the winner.
    pub class: usize,
}

/// Select `subset` logits and take their argmax (ties: earliest position).
pub fn restrict_logits(logits: &[f64], subset: &[usize]) -> Result<Restricted> {
    if subset.is_empty() {
        return Err(ModelError::BadSubset("empty subset".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for &c in subset {
        if c >= logits.len() {
            return Err(ModelError::BadSubset(format!("class {c} out of range for {} logits", logits.len())));
        }
        if !seen.insert(c) {
            return Err(ModelError::BadSubset(format!("class {c} repeated")));
        }
    }
    let sel: Vec<f64> = subset.iter().map(|&c| logits[c]).collect();
    let mut position = 0;
    for (i, &v) in sel.iter().enumerate() {
        if v > sel[position] {
            position = i;
        }
    }
    Ok(Restricted { logits: sel, position, class: subset[position] })
}
