use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{CliError, CommonArgs, Result};
use crate::models::Variant;
use crate::trainer::{Precision, TrainConfig};

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub stimulus_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub points: Option<usize>,
    pub width_factor: Option<f64>,
    pub variant: Option<Variant>,
    pub k_neighbors: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub precision: Option<Precision>,
    pub augment: Option<bool>,
    pub per_class_train: Option<usize>,
    pub per_class_test: Option<usize>,
    pub bootstrap_reps: Option<usize>,
    pub inter_trial_ms: Option<u64>,
    pub exclude_not_serious: Option<bool>,
    pub exclude_participants: Option<Vec<String>>,
    pub category_subset: Option<PathBuf>,
}

/// Fully resolved settings; serialized beside every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip)]
    pub out: PathBuf,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stimulus_seed: Option<u64>,
    pub points: usize,
    pub width_factor: f64,
    pub variant: Variant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_neighbors: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub precision: Precision,
    pub augment: bool,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub bootstrap_reps: usize,
    /// Blank screen between trials in the browser runner.
    pub inter_trial_ms: u64,
    pub exclude_not_serious: bool,
    pub exclude_participants: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category_subset: Option<PathBuf>,
    pub inputs: BTreeMap<String, String>,
}

pub const DESK_EPOCHS: usize = 6;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            out: PathBuf::from("runs"),
            seed: 0,
            stimulus_seed: None,
            points: 256,
            width_factor: 0.25,
            variant: Variant::Pt,
            k_neighbors: None,
            epochs: DESK_EPOCHS,
            batch_size: 16,
            learning_rate: 1e-3,
            precision: Precision::F32,
            augment: true,
            per_class_train: 100,
            per_class_test: 30,
            bootstrap_reps: 1000,
            inter_trial_ms: 500,
            exclude_not_serious: true,
            exclude_participants: Vec::new(),
            category_subset: None,
            inputs: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, overridden by the config file, overridden by flags.
    pub fn resolve(flags: &CommonArgs) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Validation(format!("--config {}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| CliError::Validation(format!("--config {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let d = RunConfig::default();
        let cfg = RunConfig {
            command: String::new(),
            out: flags.out.clone().or(file.out).unwrap_or(d.out),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            stimulus_seed: file.stimulus_seed,
            points: flags.points.or(file.points).unwrap_or(d.points),
            width_factor: flags.width_factor.or(file.width_factor).unwrap_or(d.width_factor),
            variant: flags.variant.or(file.variant).unwrap_or(d.variant),
            k_neighbors: file.k_neighbors,
            epochs: flags.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: file.batch_size.unwrap_or(d.batch_size),
            learning_rate: file.learning_rate.unwrap_or(d.learning_rate),
            precision: file.precision.unwrap_or(d.precision),
            augment: file.augment.unwrap_or(d.augment),
            per_class_train: file.per_class_train.unwrap_or(d.per_class_train),
            per_class_test: file.per_class_test.unwrap_or(d.per_class_test),
            bootstrap_reps: file.bootstrap_reps.unwrap_or(d.bootstrap_reps),
            inter_trial_ms: file.inter_trial_ms.unwrap_or(d.inter_trial_ms),
            exclude_not_serious: file.exclude_not_serious.unwrap_or(d.exclude_not_serious),
            exclude_participants: file.exclude_participants.unwrap_or(d.exclude_participants),
            category_subset: flags.category_subset.clone().or(file.category_subset),
            inputs: BTreeMap::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Validation(m.to_string()));
        if self.points == 0 {
            return bad("--points must be positive");
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return bad("--width-factor must be positive");
        }
        if self.k_neighbors == Some(0) {
            return bad("k_neighbors must be positive");
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return bad("per_class_train and per_class_test must be positive");
        }
        if self.bootstrap_reps == 0 {
            return bad("bootstrap_reps must be positive");
        }
        self.train_config().validate().map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn stimulus_seed(&self) -> u64 {
        self.stimulus_seed.unwrap_or(self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            width_factor: self.width_factor,
            augment_on: self.augment,
            precision: self.precision,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "seed = 3\npoints = 128\nepochs = 2\n").unwrap();
        let flags = CommonArgs { config: Some(p.clone()), seed: Some(9), ..Default::default() };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.points, cfg.epochs, cfg.batch_size), (9, 128, 2, 16));

        fs::write(&p, "seed = 3\nbogus = 1\n").unwrap();
        let err = RunConfig::resolve(&CommonArgs { config: Some(p), ..Default::default() }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig { variant: Variant::DgcnnDs, ..RunConfig::default() };
        let text = cfg.to_toml();
        assert!(text.contains("variant = \"dgcnn-ds\""));
        assert!(!text.contains("out"));
        let back: FileConfig = toml::from_str(&text.replace("command = \"\"\n", "").replace("[inputs]\n", "")).unwrap();
        assert_eq!(back.variant, Some(Variant::DgcnnDs));
    }
}
