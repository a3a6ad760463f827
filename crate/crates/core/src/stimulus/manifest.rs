use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{make_inverted, make_lego, downsample_proportion, Condition, ConditionKind, Result, StimulusError, PROPORTIONS, VOXEL_SIZES};
use crate::dataio::Dataset;
use crate::geometry::PointCloud;
use crate::rng::{derive_seed, seeded};

/// Objects per category in both experiments.
pub const OBJECTS_PER_CATEGORY: usize = 7;
/// Categories in both experiments.
pub const CATEGORY_COUNT: usize = 10;
/// Held-out category used for the gated practice trial.
pub const PRACTICE_CATEGORY: &str = "plant";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub count: usize,
    pub degrees_per_frame: f64,
    pub fps: f64,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams { count: 36, degrees_per_frame: 10.0, fps: 10.0 }
    }
}

pub const DISPLAY_SECONDS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub stimulus_id: String,
    pub source_id: String,
    pub category: String,
    pub condition: Condition,
    pub frames: FrameParams,
    pub display_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusManifest {
    pub experiment: String,
    pub schedule_seed: u64,
    /// Seeds the subsets and voxel resamplings; shared by every schedule
    /// drawn from the same stimulus set.
    pub stimulus_seed: u64,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub practice_category: Option<String>,
    pub trials: Vec<Trial>,
}

impl StimulusManifest {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn find(&self, stimulus_id: &str) -> Option<&Trial> {
        self.trials.iter().find(|t| t.stimulus_id == stimulus_id)
    }

    /// Distinct conditions in canonical order.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut cs: Vec<Condition> = self.trials.iter().map(|t| t.condition).collect();
        cs.sort();
        cs.dedup();
        cs
    }

    /// Checks id uniqueness, condition ranges and category membership.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.trials {
            t.condition.validate()?;
            if !seen.insert(t.stimulus_id.as_str()) || !self.categories.contains(&t.category) {
                return Err(StimulusError::InvalidTrial(t.stimulus_id.clone()));
            }
            if t.frames.count == 0 {
                return Err(StimulusError::NoFrames);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Object ids grouped by category.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSet {
    pub categories: Vec<String>,
    pub objects: Vec<Vec<String>>,
}

impl SourceSet {
    /// The first `per_category` objects of every category, in dataset order.
    /// `None` takes all of them.
    pub fn from_dataset(ds: &Dataset, per_category: Option<usize>) -> Self {
        let objects = (0..ds.category_names.len())
            .map(|c| {
                let ids = ds.items.iter().filter(|pc| pc.label == c).map(|pc| pc.source_id.clone());
                match per_category {
                    Some(n) => ids.take(n).collect(),
                    None => ids.collect(),
                }
            })
            .collect();
        SourceSet { categories: ds.category_names.clone(), objects }
    }

    fn check(&self, per_category: usize) -> Result<()> {
        if self.categories.len() != CATEGORY_COUNT || self.objects.len() != CATEGORY_COUNT {
            return Err(StimulusError::WrongCategoryCount { got: self.categories.len(), want: CATEGORY_COUNT });
        }
        for (c, objs) in self.categories.iter().zip(&self.objects) {
            if objs.len() != per_category {
                return Err(StimulusError::WrongObjectCount { category: c.clone(), got: objs.len(), want: per_category });
            }
        }
        Ok(())
    }
}

fn trial(experiment: &str, category: &str, source: &str, condition: Condition) -> Trial {
    Trial {
        stimulus_id: format!("{experiment}-{source}-{}-{:.2}", condition.kind.name(), condition.value()),
        source_id: source.to_string(),
        category: category.to_string(),
        condition,
        frames: FrameParams::default(),
        display_seconds: DISPLAY_SECONDS,
    }
}

/// Every object crossed with every condition, ordered by category, object,
/// then condition.
pub fn full_manifest(experiment: &str, sources: &SourceSet, conditions: &[Condition], stimulus_seed: u64) -> StimulusManifest {
    let mut trials = Vec::new();
    for (cat, objs) in sources.categories.iter().zip(&sources.objects) {
        for obj in objs {
            for &c in conditions {
                trials.push(trial(experiment, cat, obj, c));
            }
        }
    }
    StimulusManifest {
        experiment: experiment.to_string(),
        schedule_seed: 0,
        stimulus_seed,
        categories: sources.categories.clone(),
        practice_category: None,
        trials,
    }
}

fn exp1_conditions(inverted: bool) -> Vec<Condition> {
    PROPORTIONS.iter().map(|&p| if inverted { Condition::inverted(p) } else { Condition::density(p) }).collect()
}

fn exp1_name(inverted: bool) -> &'static str {
    if inverted {
        "exp1-inverted"
    } else {
        "exp1"
    }
}

/// All 490 first-experiment stimuli (7 objects x 7 proportions x 10 categories).
pub fn experiment1_full(sources: &SourceSet, inverted: bool, stimulus_seed: u64) -> Result<StimulusManifest> {
    sources.check(OBJECTS_PER_CATEGORY)?;
    let mut m = full_manifest(exp1_name(inverted), sources, &exp1_conditions(inverted), stimulus_seed);
    m.practice_category = Some(PRACTICE_CATEGORY.into());
    Ok(m)
}

/// One participant's 70 trials: within each category the seven objects get
/// the seven proportions as a random permutation; the order is then shuffled.
pub fn experiment1_schedule(sources: &SourceSet, inverted: bool, schedule_seed: u64, stimulus_seed: u64) -> Result<StimulusManifest> {
    let full = experiment1_full(sources, inverted, stimulus_seed)?;
    let mut rng = seeded(derive_seed(schedule_seed, "exp1/schedule"));
    let conds = exp1_conditions(inverted);
    let mut trials = Vec::with_capacity(CATEGORY_COUNT * OBJECTS_PER_CATEGORY);
    for (cat, objs) in sources.categories.iter().zip(&sources.objects) {
        let mut perm = conds.clone();
        perm.shuffle(&mut rng);
        for (obj, c) in objs.iter().zip(perm) {
            trials.push(trial(&full.experiment, cat, obj, c));
        }
    }
    trials.shuffle(&mut rng);
    Ok(StimulusManifest { schedule_seed, trials, ..full })
}

/// All 280 second-experiment stimuli (7 objects x 4 voxel sizes x 10 categories).
pub fn experiment2_full(sources: &SourceSet, stimulus_seed: u64) -> Result<StimulusManifest> {
    sources.check(OBJECTS_PER_CATEGORY)?;
    let conds: Vec<Condition> = VOXEL_SIZES.iter().map(|&v| Condition::lego(v)).collect();
    let mut m = full_manifest("exp2", sources, &conds, stimulus_seed);
    m.practice_category = Some(PRACTICE_CATEGORY.into());
    Ok(m)
}

/// One participant's 40 trials: per category, four distinct objects drawn
/// from the seven, each shown at a different voxel size; order shuffled.
pub fn experiment2_schedule(sources: &SourceSet, schedule_seed: u64, stimulus_seed: u64) -> Result<StimulusManifest> {
    let full = experiment2_full(sources, stimulus_seed)?;
    let mut rng = seeded(derive_seed(schedule_seed, "exp2/schedule"));
    let mut trials = Vec::with_capacity(CATEGORY_COUNT * VOXEL_SIZES.len());
    for (cat, objs) in sources.categories.iter().zip(&sources.objects) {
        let picks = index::sample(&mut rng, objs.len(), VOXEL_SIZES.len()).into_vec();
        let mut sizes = VOXEL_SIZES.to_vec();
        sizes.shuffle(&mut rng);
        for (i, v) in picks.into_iter().zip(sizes) {
            trials.push(trial("exp2", cat, &objs[i], Condition::lego(v)));
        }
    }
    trials.shuffle(&mut rng);
    Ok(StimulusManifest { schedule_seed, trials, ..full })
}

/// Builds the point cloud a trial displays. Upright and inverted trials of
/// the same object and proportion share the subset.
pub fn materialize(trial: &Trial, source: &PointCloud, stimulus_seed: u64) -> Result<PointCloud> {
    let c = trial.condition;
    c.validate()?;
    let key = |tag: &str| derive_seed(stimulus_seed, &format!("{tag}/{}/{:.6}", trial.source_id, c.value()));
    match c.kind {
        ConditionKind::Density => downsample_proportion(source, c.value(), &mut seeded(key("subset"))),
        ConditionKind::Inverted => make_inverted(source, c.value(), &mut seeded(key("subset"))),
        ConditionKind::Lego => make_lego(source, c.value(), source.len(), &mut seeded(key("lego"))),
    }
}
