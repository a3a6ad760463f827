use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{train, Precision, Result, TrainConfig, TrainError, EpochLog};
use crate::autodiff::Real;
use crate::dataio::Dataset;
use crate::exec::{map_slice, ExecMode};
use crate::geometry::PointCloud;
use crate::models::{restrict_logits, Model, ModelError, ModelSpec};
use crate::stimulus::{materialize, Condition, StimulusManifest};

/// Anything that maps a cloud to class logits.
pub trait Classifier: Sync {
    fn logits(&self, pc: &PointCloud) -> Result<Vec<f64>>;
}

impl<T: Real> Classifier for Model<T> {
    fn logits(&self, pc: &PointCloud) -> Result<Vec<f64>> {
        Ok(Model::logits(self, pc)?)
    }
}

/// Leaks the true label: logit 1 for it, 0 elsewhere.
pub struct LabelOracle {
    pub num_classes: usize,
}

impl Classifier for LabelOracle {
    fn logits(&self, pc: &PointCloud) -> Result<Vec<f64>> {
        let mut l = vec![0.0; self.num_classes];
        l[pc.label] = 1.0;
        Ok(l)
    }
}

/// Same logits for every input.
pub struct ConstantLogits(pub Vec<f64>);

impl Classifier for ConstantLogits {
    fn logits(&self, _: &PointCloud) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// A trained model in either precision.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        match self {
            TrainedModel::F32(m) => &m.spec,
            TrainedModel::F64(m) => &m.spec,
        }
    }

    pub fn save_weights<W: Write>(&self, w: W) -> Result<()> {
        match self {
            TrainedModel::F32(m) => m.save_weights(w)?,
            TrainedModel::F64(m) => m.save_weights(w)?,
        }
        Ok(())
    }
}

impl Classifier for TrainedModel {
    fn logits(&self, pc: &PointCloud) -> Result<Vec<f64>> {
        match self {
            TrainedModel::F32(m) => Classifier::logits(m, pc),
            TrainedModel::F64(m) => Classifier::logits(m, pc),
        }
    }
}

/// [`train`] in the precision named by `cfg.precision`.
pub fn train_model(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
    log: &mut dyn Write,
) -> Result<(TrainedModel, Vec<EpochLog>)> {
    Ok(match cfg.precision {
        Precision::F32 => {
            let (m, l) = train::<f32>(spec, train_set, test_set, cfg, log)?;
            (TrainedModel::F32(m), l)
        }
        Precision::F64 => {
            let (m, l) = train::<f64>(spec, train_set, test_set, cfg, log)?;
            (TrainedModel::F64(m), l)
        }
    })
}

/// 95% normal-approximation interval for a proportion, clipped to [0, 1].
pub fn normal_interval(correct: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let p = correct as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracy {
    pub condition: Condition,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl ConditionAccuracy {
    pub fn from_counts(condition: Condition, correct: usize, total: usize) -> Self {
        let (ci_lo, ci_hi) = normal_interval(correct, total);
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        ConditionAccuracy { condition, correct, total, accuracy, ci_lo, ci_hi }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub stimulus_id: String,
    pub condition: Condition,
    pub true_category: String,
    pub predicted_category: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    /// One row per condition, canonical order.
    pub rows: Vec<ConditionAccuracy>,
    /// Manifest order.
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn row(&self, condition: &Condition) -> Option<&ConditionAccuracy> {
        self.rows.iter().find(|r| &r.condition == condition)
    }

    pub fn accuracy(&self, condition: &Condition) -> Option<f64> {
        self.row(condition).map(|r| r.accuracy)
    }

    /// Rows recomputed from the stored predictions.
    pub fn recount(&self) -> Vec<ConditionAccuracy> {
        tally(&self.predictions)
    }
}

fn tally(preds: &[Prediction]) -> Vec<ConditionAccuracy> {
    let mut counts: Vec<(Condition, usize, usize)> = Vec::new();
    for p in preds {
        match counts.iter_mut().find(|c| c.0 == p.condition) {
            Some(c) => {
                c.1 += usize::from(p.correct);
                c.2 += 1;
            }
            None => counts.push((p.condition, usize::from(p.correct), 1)),
        }
    }
    counts.sort_by(|a, b| a.0.cmp(&b.0));
    counts.into_iter().map(|(c, k, n)| ConditionAccuracy::from_counts(c, k, n)).collect()
}

/// Regenerate every manifest stimulus from its source cloud, classify it with
/// logits restricted to `subset` and tally accuracy per condition.
///
/// `subset[i]` is the model class standing for `manifest.categories[i]`.
pub fn evaluate_conditions<C: Classifier + ?Sized>(
    model_name: &str,
    classifier: &C,
    manifest: &StimulusManifest,
    sources: &[&Dataset],
    subset: &[usize],
) -> Result<EvalReport> {
    if subset.len() != manifest.categories.len() {
        return Err(ModelError::BadSubset(format!(
            "{} classes for {} manifest categories",
            subset.len(),
            manifest.categories.len()
        ))
        .into());
    }
    let by_id: HashMap<&str, &PointCloud> =
        sources.iter().flat_map(|d| d.items.iter()).map(|pc| (pc.source_id.as_str(), pc)).collect();
    let results = map_slice(ExecMode::auto(), &manifest.trials, |t| -> Result<Prediction> {
        let src = by_id.get(t.source_id.as_str()).ok_or_else(|| TrainError::MissingSource(t.stimulus_id.clone()))?;
        let pc = materialize(t, src, manifest.stimulus_seed)?;
        let r = restrict_logits(&classifier.logits(&pc)?, subset)?;
        let predicted = &manifest.categories[r.position];
        Ok(Prediction {
            stimulus_id: t.stimulus_id.clone(),
            condition: t.condition,
            true_category: t.category.clone(),
            predicted_category: predicted.clone(),
            correct: *predicted == t.category,
        })
    });
    let predictions = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { model: model_name.to_string(), rows: tally(&predictions), predictions })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepEntry {
    pub variant: String,
    pub logs: Vec<EpochLog>,
    pub report: EvalReport,
}

/// Train each spec from scratch with the same data and config, then evaluate
/// it on `manifest`.
pub fn ablation_sweep(
    variants: &[(String, ModelSpec)],
    train_set: &Dataset,
    test_set: &Dataset,
    manifest: &StimulusManifest,
    cfg: &TrainConfig,
    subset: &[usize],
) -> Result<Vec<SweepEntry>> {
    if variants.is_empty() {
        return Err(TrainError::InvalidConfig("no variants to sweep".into()));
    }
    variants
        .iter()
        .map(|(name, spec)| {
            let (model, logs) = train_model(spec, train_set, None, cfg, &mut std::io::sink())?;
            let report = evaluate_conditions(name, &model, manifest, &[test_set, train_set], subset)?;
            Ok(SweepEntry { variant: name.clone(), logs, report })
        })
        .collect()
}
