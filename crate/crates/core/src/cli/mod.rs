//! The `pointlab` command line.
//!
//! Every subcommand resolves its configuration (flags > config file >
//! defaults), hashes it into a run id and writes its outputs plus the
//! resolved `config.toml` under `{out}/{subcommand}-{run id}/`.

mod config;

pub use config::{FileConfig, RunConfig};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{
    accuracy_profile, bootstrap_correlation_difference, compare_dependent_correlations, correlation_matrix, emit_figure_data,
    ingest_responses, outcomes_from_records, outcomes_from_report, pearson, profile_from_report, read_figure_data, write_records,
    AccuracyProfile, Aggregation, BootstrapResult, CorrelationMatrix, DependentComparison, ExclusionRules, FigureRow, TrialRecord,
};
use crate::dataio::{ingest_off_tree, read_dataset, sample_surface_uniform, synth, synth_dataset, write_dataset, Dataset, Split};
use crate::exec::ExecMode;
use crate::geometry::PointCloud;
use crate::models::{Model, ModelSpec, Variant};
use crate::rng::{derive_seed, seeded};
use crate::stimulus::{
    experiment1_full, experiment1_schedule, experiment2_full, experiment2_schedule, full_manifest, materialize, render_frames,
    Condition, SourceSet, StimulusManifest, OBJECTS_PER_CATEGORY, PRACTICE_CATEGORY, PROPORTIONS,
};
use crate::trainer::{evaluate_conditions, train_model, ablation_sweep, Classifier, EvalReport, Precision, SweepEntry, TrainedModel};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or missing inputs; exit code 2.
    Validation(String),
    /// Anything that fails while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime<E: std::fmt::Display>(ctx: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Runtime(format!("{ctx}: {e}"))
}

#[derive(Parser, Debug)]
#[command(name = "pointlab", version, about = "Point-cloud recognition lab")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonArgs {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for run outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat TOML config; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    #[arg(long = "width-factor", global = true)]
    pub width_factor: Option<f64>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// File with one category name per line.
    #[arg(long = "category-subset", global = true)]
    pub category_subset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Experiment {
    #[value(name = "exp1")]
    Exp1,
    #[value(name = "exp1-inverted")]
    Exp1Inverted,
    #[value(name = "exp2")]
    Exp2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum AblateFamily {
    Pt,
    Dgcnn,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the procedural ten-category dataset.
    SynthData,
    /// Sample point clouds from a `{category}/{train,test}/*.off` tree.
    IngestOff {
        #[arg(long)]
        src: PathBuf,
    },
    /// Build a participant schedule and the full stimulus manifest.
    GenStimuli {
        experiment: Experiment,
        /// Dataset directory; the synthetic test split is used when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Per-condition accuracy of a trained (or freshly initialized) model.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// A `train` run directory; an untrained model is used when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Stimulus manifest; defaults to every test object at every density.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train and evaluate a family's variants on the density stimuli.
    Ablate {
        family: AblateFamily,
        #[arg(long)]
        data: PathBuf,
    },
    /// Correlate human and model accuracy profiles.
    Correlate {
        /// Ingested response records (JSONL); repeatable.
        #[arg(long = "records", required = true)]
        records: Vec<PathBuf>,
        /// Model evaluation reports; reports of one model are pooled.
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
    /// Write manifest, frames and category list for the browser runner.
    ExportUiBundle {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Validate a response log against its manifest.
    IngestResponses {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        responses: PathBuf,
    },
    /// Summarize earlier run directories.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::IngestOff { .. } => "ingest-off",
            Command::GenStimuli { .. } => "gen-stimuli",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Correlate { .. } => "correlate",
            Command::ExportUiBundle { .. } => "export-ui-bundle",
            Command::IngestResponses { .. } => "ingest-responses",
            Command::Report { .. } => "report",
        }
    }

    fn inputs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        fn put(m: &mut BTreeMap<String, String>, k: &str, v: &Path) {
            m.insert(k.to_string(), v.display().to_string());
        }
        match self {
            Command::SynthData => {}
            Command::IngestOff { src } => put(&mut m, "src", src),
            Command::GenStimuli { experiment, data } => {
                m.insert("experiment".into(), experiment.to_possible_value().unwrap().get_name().to_string());
                if let Some(d) = data {
                    m.insert("data".into(), d.display().to_string());
                }
            }
            Command::Train { data } => put(&mut m, "data", data),
            Command::Eval { data, model, manifest } => {
                put(&mut m, "data", data);
                if let Some(p) = model {
                    put(&mut m, "model", p);
                }
                if let Some(p) = manifest {
                    put(&mut m, "manifest", p);
                }
            }
            Command::Ablate { family, data } => {
                m.insert("family".into(), format!("{family:?}").to_lowercase());
                put(&mut m, "data", data);
            }
            Command::Correlate { records, reports } => {
                for (i, p) in records.iter().enumerate() {
                    put(&mut m, &format!("records.{i}"), p);
                }
                for (i, p) in reports.iter().enumerate() {
                    put(&mut m, &format!("report.{i}"), p);
                }
            }
            Command::ExportUiBundle { manifest, data } => {
                put(&mut m, "manifest", manifest);
                if let Some(d) = data {
                    put(&mut m, "data", d);
                }
            }
            Command::IngestResponses { manifest, responses } => {
                put(&mut m, "manifest", manifest);
                put(&mut m, "responses", responses);
            }
            Command::Report { inputs } => {
                for (i, p) in inputs.iter().enumerate() {
                    put(&mut m, &format!("input.{i}"), p);
                }
            }
        }
        m
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command; returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let mut cfg = RunConfig::resolve(&cli.common)?;
    cfg.command = cli.command.name().to_string();
    cfg.inputs = cli.command.inputs();
    let text = cfg.to_toml();
    let id = run_id(&text);
    let dir = cfg.out.join(format!("{}-{id}", cfg.command));
    for p in cfg.inputs.iter().filter(|(k, _)| !matches!(k.as_str(), "experiment" | "family")).map(|(_, v)| PathBuf::from(v)) {
        if !p.exists() {
            return Err(CliError::Validation(format!("input {} does not exist", p.display())));
        }
    }
    fs::create_dir_all(&dir).map_err(runtime(dir.display()))?;
    write_file(&dir.join("config.toml"), text.as_bytes())?;
    match &cli.command {
        Command::SynthData => synth_data(&cfg, &dir)?,
        Command::IngestOff { src } => ingest_off(&cfg, src, &dir)?,
        Command::GenStimuli { experiment, data } => gen_stimuli(&cfg, *experiment, data.as_deref(), &dir)?,
        Command::Train { data } => train_cmd(&cfg, data, &dir)?,
        Command::Eval { data, model, manifest } => eval_cmd(&cfg, data, model.as_deref(), manifest.as_deref(), &dir)?,
        Command::Ablate { family, data } => ablate_cmd(&cfg, *family, data, &dir)?,
        Command::Correlate { records, reports } => correlate_cmd(&cfg, records, reports, &dir)?,
        Command::ExportUiBundle { manifest, data } => export_bundle(&cfg, manifest, data.as_deref(), &dir)?,
        Command::IngestResponses { manifest, responses } => ingest_cmd(&cfg, manifest, responses, &dir)?,
        Command::Report { inputs } => report_cmd(inputs, &dir)?,
    }
    Ok(dir)
}

/// First 16 hex digits of the SHA-256 of the resolved config.
pub fn run_id(resolved: &str) -> String {
    let digest = Sha256::digest(resolved.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(runtime(parent.display()))?;
    }
    fs::write(path, bytes).map_err(runtime(path.display()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime(path.display()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: line {}: {e}", path.display(), e.line())))
}

fn figure_csv(path: &Path, profiles: &[AccuracyProfile]) -> Result<()> {
    let mut buf = Vec::new();
    emit_figure_data(profiles, &mut buf).map_err(runtime(path.display()))?;
    write_file(path, &buf)
}

fn load_split(data: &Path, split: Split) -> Result<Dataset> {
    read_dataset(data, split).map_err(|e| CliError::Validation(format!("--data {}: {e}", data.display())))
}

/// Category names offered in manifests and their model class indices.
fn category_subset(cfg: &RunConfig, names: &[String]) -> Result<(Vec<String>, Vec<usize>)> {
    let Some(path) = &cfg.category_subset else {
        return Ok((names.to_vec(), (0..names.len()).collect()));
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("--category-subset {}: {e}", path.display())))?;
    let mut chosen = Vec::new();
    let mut idx = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Validation(format!("--category-subset {} line {}: {m}", path.display(), line_no + 1));
        let i = names.iter().position(|n| n == name).ok_or_else(|| bad(format!("unknown category {name:?}")))?;
        if idx.contains(&i) {
            return Err(bad(format!("category {name:?} repeated")));
        }
        chosen.push(name.to_string());
        idx.push(i);
    }
    if chosen.is_empty() {
        return Err(CliError::Validation(format!("--category-subset {} names no categories", path.display())));
    }
    Ok((chosen, idx))
}

fn restrict_sources(src: SourceSet, keep: &[String]) -> SourceSet {
    let objects = keep
        .iter()
        .map(|k| src.categories.iter().position(|c| c == k).map(|i| src.objects[i].clone()).unwrap_or_default())
        .collect();
    SourceSet { categories: keep.to_vec(), objects }
}

// ------------------------------------------------------------- subcommands

fn synth_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (train, test) = synth_dataset(cfg.per_class_train, cfg.per_class_test, cfg.points, cfg.seed, ExecMode::auto())
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let root = dir.join("data");
    write_dataset(&root, &train).map_err(runtime(root.display()))?;
    write_dataset(&root, &test).map_err(runtime(root.display()))
}

fn ingest_off(cfg: &RunConfig, src: &Path, dir: &Path) -> Result<()> {
    let (train, test) = ingest_off_tree(src, cfg.points, cfg.seed, ExecMode::auto())
        .map_err(|e| CliError::Validation(format!("--src {}: {e}", src.display())))?;
    let root = dir.join("data");
    write_dataset(&root, &train).map_err(runtime(root.display()))?;
    write_dataset(&root, &test).map_err(runtime(root.display()))
}

fn test_sources(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(d) => load_split(d, Split::Test),
        None => Ok(synth_dataset(1, cfg.per_class_test.max(OBJECTS_PER_CATEGORY), cfg.points, cfg.seed, ExecMode::auto())
            .map_err(|e| CliError::Validation(e.to_string()))?
            .1),
    }
}

fn gen_stimuli(cfg: &RunConfig, exp: Experiment, data: Option<&Path>, dir: &Path) -> Result<()> {
    let test = test_sources(cfg, data)?;
    let (names, _) = category_subset(cfg, &test.category_names)?;
    let src = restrict_sources(SourceSet::from_dataset(&test, Some(OBJECTS_PER_CATEGORY)), &names);
    let v = |e: crate::stimulus::StimulusError| CliError::Validation(e.to_string());
    let stim = cfg.stimulus_seed();
    let (full, schedule) = match exp {
        Experiment::Exp1 | Experiment::Exp1Inverted => {
            let inv = exp == Experiment::Exp1Inverted;
            (experiment1_full(&src, inv, stim).map_err(v)?, experiment1_schedule(&src, inv, cfg.seed, stim).map_err(v)?)
        }
        Experiment::Exp2 => (experiment2_full(&src, stim).map_err(v)?, experiment2_schedule(&src, cfg.seed, stim).map_err(v)?),
    };
    write_file(&dir.join("full_manifest.json"), (full.to_json() + "\n").as_bytes())?;
    write_file(&dir.join("manifest.json"), (schedule.to_json() + "\n").as_bytes())
}

/// Written beside the weights so `eval` can rebuild the model.
#[derive(Serialize, serde::Deserialize)]
struct ModelCard {
    variant: Option<Variant>,
    precision: Precision,
    spec: ModelSpec,
}

fn desk_spec(cfg: &RunConfig, num_classes: usize, variant: Variant) -> ModelSpec {
    let mut spec = ModelSpec::desk(variant, num_classes, cfg.width_factor, cfg.points);
    if let Some(k) = cfg.k_neighbors {
        spec.k_neighbors = k;
    }
    spec
}

fn train_cmd(cfg: &RunConfig, data: &Path, dir: &Path) -> Result<()> {
    let train = load_split(data, Split::Train)?;
    let test = read_dataset(data, Split::Test).ok();
    let spec = desk_spec(cfg, train.category_names.len(), cfg.variant);
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let mut log = Vec::new();
    let (model, _) = train_model(&spec, &train, test.as_ref(), &cfg.train_config(), &mut log).map_err(runtime("training"))?;
    write_file(&dir.join("train_log.jsonl"), &log)?;
    let mut weights = Vec::new();
    model.save_weights(&mut weights).map_err(runtime("checkpoint"))?;
    write_file(&dir.join("weights.ckpt"), &weights)?;
    write_json(&dir.join("model.json"), &ModelCard { variant: Some(cfg.variant), precision: cfg.precision, spec })
}

fn load_model(run: &Path) -> Result<TrainedModel> {
    let card: ModelCard = read_json(&run.join("model.json"))?;
    let path = run.join("weights.ckpt");
    let f = fs::File::open(&path).map_err(|e| CliError::Validation(format!("--model {}: {e}", path.display())))?;
    let r = BufReader::new(f);
    let bad = |e: crate::models::ModelError| CliError::Validation(format!("{}: {e}", path.display()));
    Ok(match card.precision {
        Precision::F32 => {
            let mut m = Model::<f32>::new(card.spec, &mut seeded(0)).map_err(bad)?;
            m.load_weights(r).map_err(bad)?;
            TrainedModel::F32(m)
        }
        Precision::F64 => {
            let mut m = Model::<f64>::new(card.spec, &mut seeded(0)).map_err(bad)?;
            m.load_weights(r).map_err(bad)?;
            TrainedModel::F64(m)
        }
    })
}

/// Every test object crossed with every density.
fn density_manifest(test: &Dataset, names: &[String], stimulus_seed: u64) -> StimulusManifest {
    let src = restrict_sources(SourceSet::from_dataset(test, None), names);
    let conds: Vec<Condition> = PROPORTIONS.iter().map(|&p| Condition::density(p)).collect();
    full_manifest("density", &src, &conds, stimulus_seed)
}

fn eval_cmd(cfg: &RunConfig, data: &Path, model: Option<&Path>, manifest: Option<&Path>, dir: &Path) -> Result<()> {
    let test = load_split(data, Split::Test)?;
    let train = read_dataset(data, Split::Train).ok();
    let (names, subset) = category_subset(cfg, &test.category_names)?;
    let manifest = match manifest {
        Some(p) => {
            let m: StimulusManifest = read_json(p)?;
            m.validate().map_err(|e| CliError::Validation(format!("--manifest {}: {e}", p.display())))?;
            m
        }
        None => density_manifest(&test, &names, cfg.stimulus_seed()),
    };
    let subset: Vec<usize> = manifest
        .categories
        .iter()
        .map(|c| {
            names.iter().position(|n| n == c).map(|i| subset[i]).ok_or_else(|| CliError::Validation(format!("manifest category {c:?} not in the model's categories")))
        })
        .collect::<Result<_>>()?;
    let (name, classifier) = match model {
        Some(run) => {
            let m = load_model(run)?;
            (m.spec().variant().map(|v| v.name().to_string()).unwrap_or_else(|| "custom".into()), m)
        }
        None => {
            let spec = desk_spec(cfg, test.category_names.len(), cfg.variant);
            let m = Model::<f32>::new(spec, &mut seeded(derive_seed(cfg.seed, "init"))).map_err(|e| CliError::Validation(e.to_string()))?;
            (format!("{}-untrained", cfg.variant.name()), TrainedModel::F32(m))
        }
    };
    let mut sources: Vec<&Dataset> = vec![&test];
    if let Some(t) = &train {
        sources.push(t);
    }
    let report = evaluate_conditions(&name, &classifier as &dyn Classifier, &manifest, &sources, &subset).map_err(runtime("evaluation"))?;
    write_json(&dir.join("eval_report.json"), &report)?;
    figure_csv(&dir.join("figure.csv"), &[profile_from_report(&name, &report)])
}

fn ablate_cmd(cfg: &RunConfig, family: AblateFamily, data: &Path, dir: &Path) -> Result<()> {
    let train = load_split(data, Split::Train)?;
    let test = load_split(data, Split::Test)?;
    let (names, subset) = category_subset(cfg, &test.category_names)?;
    let variants: &[Variant] = match family {
        AblateFamily::Pt => &[Variant::Pt, Variant::PtNoAttn, Variant::PtNoPe, Variant::PtNoDs],
        AblateFamily::Dgcnn => &[Variant::Dgcnn, Variant::DgcnnDs],
    };
    let specs: Vec<(String, ModelSpec)> =
        variants.iter().map(|&v| (v.display_name().to_string(), desk_spec(cfg, train.category_names.len(), v))).collect();
    let manifest = density_manifest(&test, &names, cfg.stimulus_seed());
    let entries = ablation_sweep(&specs, &train, &test, &manifest, &cfg.train_config(), &subset).map_err(runtime("ablation"))?;
    write_json(&dir.join("ablation.json"), &entries)?;
    let profiles: Vec<AccuracyProfile> = entries.iter().map(|e| profile_from_report(&e.variant, &e.report)).collect();
    figure_csv(&dir.join("figure.csv"), &profiles)
}

#[derive(Serialize, serde::Deserialize)]
struct ModelCorrelation {
    model: String,
    r: f64,
    p: f64,
}

#[derive(Serialize, serde::Deserialize)]
struct PairComparison {
    a: String,
    b: String,
    r_a: f64,
    r_b: f64,
    r_ab: f64,
    steiger: DependentComparison,
    bootstrap: BootstrapResult,
}

#[derive(Serialize, serde::Deserialize)]
struct CorrelationOutput {
    conditions: Vec<Condition>,
    models: Vec<ModelCorrelation>,
    comparisons: Vec<PairComparison>,
    matrix: CorrelationMatrix,
}

fn correlate_cmd(cfg: &RunConfig, records: &[PathBuf], reports: &[PathBuf], dir: &Path) -> Result<()> {
    let mut human: Vec<TrialRecord> = Vec::new();
    for p in records {
        let text = fs::read_to_string(p).map_err(|e| CliError::Validation(format!("--records {}: {e}", p.display())))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            human.push(
                serde_json::from_str(line).map_err(|e| CliError::Validation(format!("--records {} line {}: {e}", p.display(), i + 1)))?,
            );
        }
    }
    let mut merged: Vec<EvalReport> = Vec::new();
    for p in reports {
        let r: EvalReport = read_json(p)?;
        match merged.iter_mut().find(|m| m.model == r.model) {
            Some(m) => {
                m.rows.extend(r.rows);
                m.rows.sort_by(|a, b| a.condition.cmp(&b.condition));
                m.predictions.extend(r.predictions);
            }
            None => merged.push(r),
        }
    }
    let human_profile = accuracy_profile("human", &human, None, Aggregation::ByParticipant).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut axis = human_profile.conditions();
    for m in &merged {
        axis.retain(|c| m.row(c).is_some());
    }
    if axis.len() < 3 {
        return Err(CliError::Validation(format!("only {} conditions shared by humans and every model; need 3", axis.len())));
    }
    let human_profile = human_profile.select(&axis).map_err(runtime("profile"))?;
    let model_profiles: Vec<AccuracyProfile> =
        merged.iter().map(|m| profile_from_report(&m.model, m).select(&axis)).collect::<std::result::Result<_, _>>().map_err(runtime("profile"))?;
    let h = human_profile.accuracies();
    let n = axis.len();
    let mut models = Vec::new();
    for p in &model_profiles {
        let c = pearson(&h, &p.accuracies()).map_err(runtime(format!("correlation with {}", p.series)))?;
        models.push(ModelCorrelation { model: p.series.clone(), r: c.r, p: c.p });
    }
    let human_out = outcomes_from_records(&human, &axis);
    let mut comparisons = Vec::new();
    for i in 0..merged.len() {
        for j in i + 1..merged.len() {
            let r_ab = pearson(&model_profiles[i].accuracies(), &model_profiles[j].accuracies())
                .map_err(runtime(format!("{} vs {}", merged[i].model, merged[j].model)))?
                .r;
            let steiger = compare_dependent_correlations(models[i].r, models[j].r, r_ab, n).map_err(runtime("dependent correlation test"))?;
            let bootstrap = bootstrap_correlation_difference(
                &human_out,
                &outcomes_from_report(&merged[i], &axis),
                &outcomes_from_report(&merged[j], &axis),
                cfg.bootstrap_reps,
                derive_seed(cfg.seed, &format!("bootstrap/{i}/{j}")),
            )
            .map_err(runtime("bootstrap"))?;
            comparisons.push(PairComparison { a: merged[i].model.clone(), b: merged[j].model.clone(), r_a: models[i].r, r_b: models[j].r, r_ab, steiger, bootstrap });
        }
    }
    let mut all = vec![human_profile];
    all.extend(model_profiles);
    let matrix = correlation_matrix(&all).map_err(runtime("matrix"))?;
    write_json(&dir.join("correlations.json"), &CorrelationOutput { conditions: axis, models, comparisons, matrix })?;
    figure_csv(&dir.join("figure.csv"), &all)
}

#[derive(Serialize)]
struct FrameFile<'a> {
    stimulus_id: &'a str,
    category: &'a str,
    degrees_per_frame: f64,
    fps: f64,
    frames: Vec<Vec<[f64; 3]>>,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn frame_file<'a>(id: &'a str, category: &'a str, pc: &PointCloud, fp: &crate::stimulus::FrameParams) -> Result<FrameFile<'a>> {
    let frames = render_frames(pc, fp.count, fp.degrees_per_frame).map_err(runtime(id))?;
    let frames = frames.into_iter().map(|f| f.into_iter().map(|p| p.map(round4)).collect()).collect();
    Ok(FrameFile { stimulus_id: id, category, degrees_per_frame: fp.degrees_per_frame, fps: fp.fps, frames })
}

fn export_bundle(cfg: &RunConfig, manifest_path: &Path, data: Option<&Path>, dir: &Path) -> Result<()> {
    let manifest: StimulusManifest = read_json(manifest_path)?;
    manifest.validate().map_err(|e| CliError::Validation(format!("--manifest {}: {e}", manifest_path.display())))?;
    let test = test_sources(cfg, data)?;
    let train = data.and_then(|d| read_dataset(d, Split::Train).ok());
    let mut by_id: BTreeMap<&str, &PointCloud> = test.items.iter().map(|p| (p.source_id.as_str(), p)).collect();
    if let Some(t) = &train {
        by_id.extend(t.items.iter().map(|p| (p.source_id.as_str(), p)));
    }
    let bundle = dir.join("bundle");
    let frames_dir = bundle.join("frames");
    let rendered = crate::exec::map_slice(ExecMode::auto(), &manifest.trials, |t| -> Result<Vec<u8>> {
        let src = by_id.get(t.source_id.as_str()).ok_or_else(|| CliError::Validation(format!("no source cloud for {}", t.stimulus_id)))?;
        let pc = materialize(t, src, manifest.stimulus_seed).map_err(runtime(&t.stimulus_id))?;
        serde_json::to_vec(&frame_file(&t.stimulus_id, &t.category, &pc, &t.frames)?).map_err(runtime(&t.stimulus_id))
    });
    for (t, bytes) in manifest.trials.iter().zip(rendered) {
        write_file(&frames_dir.join(format!("{}.json", t.stimulus_id)), &bytes?)?;
    }
    if let Some(practice) = &manifest.practice_category {
        let mut rng = seeded(derive_seed(cfg.seed, "practice"));
        let mesh = synth::practice_mesh(&mut rng);
        let pc = sample_surface_uniform(&mesh, cfg.points, 0, "practice", &mut rng).map_err(runtime("practice stimulus"))?;
        let fp = crate::stimulus::FrameParams::default();
        let file = frame_file("practice", practice, &pc, &fp)?;
        write_file(&frames_dir.join("practice.json"), &serde_json::to_vec(&file).map_err(runtime("practice"))?)?;
    }
    write_file(&bundle.join("manifest.json"), (manifest.to_json() + "\n").as_bytes())?;
    let mut cats = manifest.categories.join("\n");
    cats.push('\n');
    write_file(&bundle.join("categories.txt"), cats.as_bytes())?;
    let settings = serde_json::json!({
        "inter_trial_ms": cfg.inter_trial_ms,
        "practice_category": manifest.practice_category.as_deref().unwrap_or(PRACTICE_CATEGORY),
        "schedule_seed": manifest.schedule_seed,
    });
    write_json(&bundle.join("settings.json"), &settings)
}

fn ingest_cmd(cfg: &RunConfig, manifest_path: &Path, responses: &Path, dir: &Path) -> Result<()> {
    let manifest: StimulusManifest = read_json(manifest_path)?;
    let f = fs::File::open(responses).map_err(|e| CliError::Validation(format!("--responses {}: {e}", responses.display())))?;
    let rules = ExclusionRules { drop_not_serious: cfg.exclude_not_serious, exclude_participants: cfg.exclude_participants.clone() };
    let records = ingest_responses(BufReader::new(f), &manifest, &rules)
        .map_err(|e| CliError::Validation(format!("--responses {}: {e}", responses.display())))?;
    let path = dir.join("records.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(runtime(path.display()))?);
    write_records(&records, &mut w).map_err(runtime(path.display()))?;
    w.flush().map_err(runtime(path.display()))?;
    if records.is_empty() {
        return Ok(());
    }
    let pooled = accuracy_profile("human-pooled", &records, None, Aggregation::Pooled).map_err(runtime("profile"))?;
    let by = accuracy_profile("human", &records, None, Aggregation::ByParticipant).map_err(runtime("profile"))?;
    figure_csv(&dir.join("figure.csv"), &[by, pooled])
}

fn report_cmd(inputs: &[PathBuf], dir: &Path) -> Result<()> {
    let mut md = String::from("# Report\n");
    let mut rows: Vec<FigureRow> = Vec::new();
    for input in inputs {
        let label = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        md.push_str(&format!("\n## {label}\n"));
        let log = input.join("train_log.jsonl");
        if log.is_file() {
            let text = fs::read_to_string(&log).map_err(runtime(log.display()))?;
            if let Some(last) = text.lines().last() {
                let rec: crate::trainer::EpochLog = serde_json::from_str(last).map_err(|e| CliError::Validation(format!("{}: {e}", log.display())))?;
                md.push_str(&format!(
                    "\nTraining: {} epochs, final loss {:.4}, train accuracy {:.3}{}\n",
                    rec.epoch,
                    rec.train_loss,
                    rec.train_accuracy,
                    rec.test_accuracy.map(|a| format!(", test accuracy {a:.3}")).unwrap_or_default()
                ));
            }
        }
        let corr = input.join("correlations.json");
        if corr.is_file() {
            let c: CorrelationOutput = read_json(&corr)?;
            md.push_str(&format!("\nCorrelation with human accuracy over {} conditions:\n\n| model | r | p |\n|---|---|---|\n", c.conditions.len()));
            for m in &c.models {
                md.push_str(&format!("| {} | {:.4} | {:.4} |\n", m.model, m.r, m.p));
            }
            for p in &c.comparisons {
                md.push_str(&format!("\n{} vs {}: z = {:.3}, p = {:.4}\n", p.a, p.b, p.steiger.z, p.steiger.p));
            }
        }
        let fig = input.join("figure.csv");
        if fig.is_file() {
            let f = fs::File::open(&fig).map_err(runtime(fig.display()))?;
            let profiles = read_figure_data(f).map_err(|e| CliError::Validation(format!("{}: {e}", fig.display())))?;
            md.push_str("\n| series | condition | accuracy | 95% CI | n |\n|---|---|---|---|---|\n");
            for p in &profiles {
                for pt in &p.points {
                    md.push_str(&format!("| {} | {} | {:.3} | [{:.3}, {:.3}] | {} |\n", p.series, pt.condition, pt.accuracy, pt.ci_lo, pt.ci_hi, pt.n));
                    rows.push(FigureRow {
                        series: format!("{label}/{}", p.series),
                        condition_kind: pt.condition.kind.name().into(),
                        condition_value: pt.condition.value(),
                        accuracy: pt.accuracy,
                        ci_lo: pt.ci_lo,
                        ci_hi: pt.ci_hi,
                        n: pt.n,
                    });
                }
            }
        }
        let abl = input.join("ablation.json");
        if abl.is_file() {
            let entries: Vec<SweepEntry> = read_json(&abl)?;
            md.push_str("\nVariants: ");
            md.push_str(&entries.iter().map(|e| e.variant.as_str()).collect::<Vec<_>>().join(", "));
            md.push('\n');
        }
    }
    write_file(&dir.join("report.md"), md.as_bytes())?;
    let path = dir.join("figures.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["series", "condition_kind", "condition_value", "accuracy", "ci_lo", "ci_hi", "n"]).map_err(runtime(path.display()))?;
    }
    for r in &rows {
        w.serialize(r).map_err(runtime(path.display()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&path, &bytes)
}
