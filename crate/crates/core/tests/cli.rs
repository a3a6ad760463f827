use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pointlab::stimulus::StimulusManifest;

const TINY: &str = "points = 96\nper_class_train = 2\nper_class_test = 7\nepochs = 1\nwidth_factor = 0.125\nbatch_size = 4\nk_neighbors = 8\n";

fn exe(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointlab")).current_dir(work).args(args).output().unwrap()
}

fn ok(work: &Path, args: &[&str]) -> PathBuf {
    let o = exe(work, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    work.join(String::from_utf8(o.stdout).unwrap().trim())
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let run = ok(tmp.path(), &["--config", "tiny.toml", "--out", "runs", "synth-data"]);
    (tmp, run.join("data"))
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path();
    assert_eq!(exe(w, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(exe(w, &["train"]).status.code(), Some(2));
    assert_eq!(exe(w, &["train", "--data", "missing"]).status.code(), Some(2));
    assert_eq!(exe(w, &["--points", "0", "synth-data"]).status.code(), Some(2));
    assert_eq!(exe(w, &["--variant", "resnet", "synth-data"]).status.code(), Some(2));
    assert_eq!(exe(w, &["--help"]).status.code(), Some(0));
    fs::write(w.join("bad.toml"), "seed = 1\nnot_a_key = 2\n").unwrap();
    let o = exe(w, &["--config", "bad.toml", "synth-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not_a_key"));
    fs::create_dir(w.join("empty")).unwrap();
    assert_eq!(exe(w, &["train", "--data", "empty"]).status.code(), Some(2));
    // 20% of 16 points is too few for the model: fails while running
    fs::write(w.join("small.toml"), "points = 16\nper_class_train = 1\nper_class_test = 1\n").unwrap();
    let run = ok(w, &["--config", "small.toml", "synth-data"]);
    let o = exe(w, &["--config", "small.toml", "eval", "--data", run.join("data").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_directory_layout_and_ids() {
    let (tmp, data) = setup();
    let w = tmp.path();
    let data = data.to_str().unwrap();
    let a = ok(w, &["--config", "tiny.toml", "--out", "runs", "gen-stimuli", "exp1", "--data", data]);
    let b = ok(w, &["--config", "tiny.toml", "--out", "runs", "--seed", "4", "gen-stimuli", "exp1", "--data", data]);
    assert_ne!(a, b);
    let name = a.file_name().unwrap().to_str().unwrap();
    assert!(name.starts_with("gen-stimuli-") && name.len() == "gen-stimuli-".len() + 16, "{name}");
    let cfg = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(cfg.contains("command = \"gen-stimuli\"") && cfg.contains("experiment = \"exp1\""), "{cfg}");
    let schedule: StimulusManifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let full: StimulusManifest = serde_json::from_str(&fs::read_to_string(a.join("full_manifest.json")).unwrap()).unwrap();
    assert_eq!((schedule.len(), full.len()), (70, 490));
    schedule.validate().unwrap();
    // a different schedule seed reorders trials but draws from the same stimuli
    let other: StimulusManifest = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_ne!(schedule.trials, other.trials);
    assert!(other.trials.iter().all(|t| full.find(&t.stimulus_id).is_some()));
}

#[test]
fn gen_stimuli_is_byte_identical() {
    let (tmp, data) = setup();
    let w = tmp.path();
    let data = data.to_str().unwrap();
    for exp in ["exp1", "exp1-inverted", "exp2"] {
        let a = ok(w, &["--config", "tiny.toml", "--out", "x", "gen-stimuli", exp, "--data", data]);
        let b = ok(w, &["--config", "tiny.toml", "--out", "y", "gen-stimuli", exp, "--data", data]);
        for f in ["manifest.json", "full_manifest.json", "config.toml"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{exp}/{f}");
        }
    }
}

#[test]
fn train_eval_and_bundle() {
    let (tmp, data) = setup();
    let w = tmp.path();
    let d = data.to_str().unwrap();
    let model = ok(w, &["--config", "tiny.toml", "--out", "runs", "train", "--data", d]);
    for f in ["train_log.jsonl", "weights.ckpt", "model.json"] {
        assert!(model.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(model.join("train_log.jsonl")).unwrap().lines().count(), 1);
    let eval = ok(w, &["--config", "tiny.toml", "--out", "runs", "eval", "--data", d, "--model", model.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 7);
    let csv = fs::read_to_string(eval.join("figure.csv")).unwrap();
    assert!(csv.starts_with("series,condition_kind,condition_value,accuracy,ci_lo,ci_hi,n"));

    let gen = ok(w, &["--config", "tiny.toml", "--out", "runs", "gen-stimuli", "exp2", "--data", d]);
    let bundle = ok(w, &["--config", "tiny.toml", "--out", "runs", "export-ui-bundle", "--manifest", gen.join("manifest.json").to_str().unwrap(), "--data", d]);
    let b = bundle.join("bundle");
    for f in ["manifest.json", "categories.txt", "settings.json", "frames/practice.json"] {
        assert!(b.join(f).is_file(), "{f}");
    }
    let m: StimulusManifest = serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.len(), 40);
    let frames: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("frames").join(format!("{}.json", m.trials[0].stimulus_id))).unwrap()).unwrap();
    assert!(frames.to_string().contains('['));
    assert_eq!(fs::read_dir(b.join("frames")).unwrap().count(), 41);
}
