//! Training loop, per-condition evaluation and variant sweeps.

mod eval;

pub use eval::*;

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Graph, Mode, Real};
use crate::dataio::{augment, Dataset};
use crate::geometry::{Point3, PointCloud};
use crate::models::{Model, ModelError, ModelSpec};
use crate::rng::{derive_seed, derive_seed_index, seeded};
use crate::stimulus::StimulusError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss in epoch {epoch}; batch items {items:?}")]
    NonFiniteLoss { epoch: usize, items: Vec<String> },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("stimulus {0} has no source cloud")]
    MissingSource(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub width_factor: f64,
    pub augment_on: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            width_factor: 0.25,
            augment_on: true,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return Err(TrainError::InvalidConfig("width_factor must be positive".into()));
        }
        Ok(())
    }
}

/// One JSONL record per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Batch-norm running-statistic momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Mean loss and accuracy of one training-mode batch; applies one Adam step.
fn train_step<T: Real>(
    model: &mut Model<T>,
    state: &mut AdamState<T>,
    adam: &AdamConfig,
    clouds: &[PointCloud],
    epoch: usize,
) -> Result<(f64, usize)> {
    let views: Vec<&[Point3]> = clouds.iter().map(|c| c.points.as_slice()).collect();
    let labels: Vec<usize> = clouds.iter().map(|c| c.label).collect();
    let mut g = Graph::new(Mode::Train);
    let logits = model.forward(&mut g, &views, None)?;
    let non_finite = || TrainError::NonFiniteLoss { epoch, items: clouds.iter().map(|c| c.source_id.clone()).collect() };
    let loss = match g.cross_entropy(logits, &labels) {
        Ok(l) => l,
        Err(AutodiffError::NonFiniteInput { .. }) => return Err(non_finite()),
        Err(e) => return Err(e.into()),
    };
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(non_finite());
    }
    let lv = g.value(logits);
    let c = lv.cols();
    let correct = lv
        .data()
        .chunks(c)
        .zip(&labels)
        .filter(|(row, &y)| argmax(row.iter().map(|x| x.as_f64())) == y)
        .count();
    g.backward(loss)?;
    let grads = g.param_grads(model.params.len());
    adam_step(&mut model.params, &grads, state, adam)?;
    model.update_running_stats(&g, BN_MOMENTUM);
    Ok((value, correct))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Plain top-1 accuracy over a dataset (all classes, eval mode).
pub fn dataset_accuracy<C: Classifier + ?Sized>(model: &C, ds: &Dataset) -> Result<f64> {
    let preds = crate::exec::map_slice(crate::exec::ExecMode::auto(), &ds.items, |pc| model.logits(pc).map(argmax));
    let mut correct = 0;
    for (p, pc) in preds.into_iter().zip(&ds.items) {
        if p? == pc.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Train a fresh model. Every random choice (init, shuffling, augmentation)
/// derives from `cfg.seed`, so equal inputs give bit-identical weights.
/// One [`EpochLog`] JSON line per epoch goes to `log`.
pub fn train<T: Real>(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<(Model<T>, Vec<EpochLog>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Model::<T>::new(spec.clone(), &mut seeded(derive_seed(cfg.seed, "init")))?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut state = AdamState::new(&model.params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let n = train_set.len();
    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed_index(derive_seed(cfg.seed, "epoch"), epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded(epoch_seed));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for batch in order.chunks(cfg.batch_size) {
            // a single-cloud tail batch would give degenerate head statistics
            if batch.len() < 2 && n >= 2 {
                continue;
            }
            let clouds: Vec<PointCloud> = batch
                .iter()
                .map(|&i| {
                    let pc = &train_set.items[i];
                    if cfg.augment_on {
                        augment(pc, &mut seeded(derive_seed_index(epoch_seed, i as u64)))
                    } else {
                        pc.clone()
                    }
                })
                .collect();
            let (l, c) = train_step(&mut model, &mut state, &adam, &clouds, epoch)?;
            loss_sum += l * batch.len() as f64;
            correct += c;
            seen += batch.len();
        }
        let test_accuracy = test_set.map(|t| dataset_accuracy(&model, t)).transpose()?;
        let rec = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            test_accuracy,
        };
        serde_json::to_writer(&mut *log, &rec)?;
        writeln!(log)?;
        logs.push(rec);
    }
    Ok((model, logs))
}

/// Mean cross-entropy of `model` over `ds` in eval mode.
pub fn mean_loss<T: Real>(model: &Model<T>, ds: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for pc in &ds.items {
        let l = model.logits(pc)?;
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = l.iter().map(|v| (v - m).exp()).sum();
        total += z.ln() + m - l[pc.label];
    }
    Ok(total / ds.len() as f64)
}
