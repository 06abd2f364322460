use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lmgc::experiments::SynthSpec;
use lmgc::io::ModelFile;
use lmgc::linalg::SymMatrix;
use lmgc::{loss, model, objective, privacy, ClassParams, HuberLoss, LabeledDataset};
use serde_json::Value;

fn lmgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmgc")).args(args).output().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn blobs(&self, name: &str, separation: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let (raw, labels) = SynthSpec::new(120, 2, 3, separation, 21).sample_raw(120, 21);
        let mut f = std::fs::File::create(self.path(name)).unwrap();
        lmgc::io::write_labeled_csv(&mut f, &raw, &labels).unwrap();
        (raw, labels)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn no_privacy_training_fits_blobs_and_writes_a_report() {
    let ws = Workspace::new();
    ws.blobs("train.csv", 12.0);
    let before = std::fs::read(ws.path("train.csv")).unwrap();
    let out = lmgc(&["train", "--data", &ws.arg("train.csv"), "--model", &ws.arg("m.json"), "--no-privacy"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(ws.path("train.csv")).unwrap(), before);
    let report = json(&ws.path("m.report.json"));
    assert!(report["train_accuracy"].as_f64().unwrap() >= 0.99);
    assert_eq!(report["converged"], Value::Bool(true));
    assert!(report["epsilon"].is_null());
    assert!(report["privacy_caveat"].as_str().unwrap().contains("epsilon"));
    let model = json(&ws.path("m.json"));
    assert_eq!(model["C"], 3);
    assert!(model["epsilon"].is_null());
}

#[test]
fn private_training_records_seeds_and_bounds() {
    let ws = Workspace::new();
    ws.blobs("train.csv", 8.0);
    let out = lmgc(&[
        "train",
        "--data",
        &ws.arg("train.csv"),
        "--model",
        &ws.arg("m.json"),
        "--out",
        &ws.arg("r.json"),
        "--epsilon",
        "1.5",
        "--seed",
        "42",
        "--lambda",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&ws.path("r.json"));
    assert_eq!(r["seed"], 42);
    assert_eq!(r["noise_seed"], 42);
    assert_eq!(r["epsilon"], 1.5);
    assert_eq!(r["lambda"], 2.0);
    let expected = privacy::empirical_risk_bound(2, 3, 1.5, 2.0, 0.1).unwrap();
    assert_eq!(r["bounds"]["empirical_risk_bound"].as_f64().unwrap(), expected);
    let b = privacy::sample_perturbation_seeded(2, 1.5, 42).unwrap();
    assert_eq!(r["noise_norm"].as_f64().unwrap(), b.frob_norm());
}

#[test]
fn missing_epsilon_is_a_validation_error_naming_the_flag() {
    let ws = Workspace::new();
    ws.blobs("train.csv", 8.0);
    let out = lmgc(&["train", "--data", &ws.arg("train.csv"), "--model", &ws.arg("m.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--epsilon"));
    assert!(!ws.path("m.json").exists());
}

#[test]
fn exit_codes_for_io_and_validation_failures() {
    let ws = Workspace::new();
    let out = lmgc(&["train", "--data", &ws.arg("absent.csv"), "--model", &ws.arg("m.json"), "--no-privacy"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(ws.path("bad.csv"), "0.1,0.2,0\n").unwrap();
    let out = lmgc(&["train", "--data", &ws.arg("bad.csv"), "--model", &ws.arg("m.json"), "--no-privacy"]);
    assert_eq!(out.status.code(), Some(2));
    ws.blobs("train.csv", 8.0);
    let out = lmgc(&["train", "--data", &ws.arg("train.csv"), "--model", &ws.arg("m.json"), "--epsilon", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn trained_model(ws: &Workspace) -> (ModelFile, ClassParams) {
    ws.blobs("train.csv", 8.0);
    let out =
        lmgc(&["train", "--data", &ws.arg("train.csv"), "--model", &ws.arg("m.json"), "--epsilon", "3", "--seed", "1"]);
    assert!(out.status.success());
    let file = ModelFile::read(&ws.path("m.json")).unwrap();
    let params = file.to_params().unwrap();
    (file, params)
}

#[test]
fn predict_applies_the_stored_scale_factor() {
    let ws = Workspace::new();
    let (file, params) = trained_model(&ws);
    std::fs::write(ws.path("one.csv"), "3.5,-2.0\n").unwrap();
    let out = lmgc(&["predict", "--model", &ws.arg("m.json"), "--data", &ws.arg("one.csv")]);
    assert!(out.status.success());
    let expected = model::predict(&params, &model::homogenize(&[3.5, -2.0], file.scale_factor)).unwrap() + 1;
    assert_eq!(String::from_utf8(out.stdout).unwrap(), format!("{expected}\n"));

    std::fs::write(ws.path("empty.csv"), "").unwrap();
    let out = lmgc(&["predict", "--model", &ws.arg("m.json"), "--data", &ws.arg("empty.csv")]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());

    std::fs::write(ws.path("wide.csv"), "1,2,3\n").unwrap();
    let out = lmgc(&["predict", "--model", &ws.arg("m.json"), "--data", &ws.arg("wide.csv")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_matches_library_calls() {
    let ws = Workspace::new();
    let (file, params) = trained_model(&ws);
    let out =
        lmgc(&["evaluate", "--model", &ws.arg("m.json"), "--data", &ws.arg("train.csv"), "--out", &ws.arg("e.json")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&ws.path("e.json"));

    let raw = lmgc::io::read_labeled_csv_path(&ws.path("train.csv"), b',').unwrap();
    let data = LabeledDataset::with_scale_factor(&raw.features, raw.labels, 3, file.scale_factor).unwrap();
    let hl = HuberLoss::default();
    let phi = params.as_slice();
    assert_eq!(m["empirical_loss"].as_f64().unwrap(), loss::empirical_loss(phi, &data, &hl).unwrap());
    assert_eq!(m["regularizer"].as_f64().unwrap(), objective::regularizer(phi, file.lambda));
    assert_eq!(m["hinge_loss"].as_f64().unwrap(), loss::hinge_loss_total(phi, &data).unwrap());
    assert_eq!(m["accuracy"].as_f64().unwrap(), model::accuracy(&params, &data).unwrap());
    assert_eq!(
        m["bounds"]["true_risk_bound"].as_f64().unwrap(),
        privacy::true_risk_bound(2, 3, data.len(), 3.0, file.lambda, 0.1).unwrap()
    );
}

#[test]
fn perfect_margin_model_has_zero_loss() {
    let ws = Workspace::new();
    // Class 1 scores 0 on the first point, class 2 scores 10; the reverse on the second.
    let a = SymMatrix::from_rows(&[vec![10.0, -10.0], vec![-10.0, 10.0]]).unwrap();
    let b = SymMatrix::from_rows(&[vec![10.0, 10.0], vec![10.0, 10.0]]).unwrap();
    let params = ClassParams::new(vec![a, b]).unwrap();
    ModelFile::from_params(&params, 1.0, None, 1.0).write(&ws.path("m.json")).unwrap();
    std::fs::write(ws.path("d.csv"), "1,1\n-1,2\n").unwrap();
    let out = lmgc(&["evaluate", "--model", &ws.arg("m.json"), "--data", &ws.arg("d.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["empirical_loss"].as_f64().unwrap(), 0.0);
    assert_eq!(m["accuracy"].as_f64().unwrap(), 1.0);
    assert!(m["bounds"].is_null());
}

#[test]
fn sample_noise_matches_the_library_sampler() {
    let out = lmgc(&["sample-noise", "--dim", "2", "--epsilon", "1", "--seed", "9"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let b = privacy::sample_perturbation_seeded(2, 1.0, 9).unwrap();
    assert_eq!(v["norm"].as_f64().unwrap(), b.frob_norm());
    assert_eq!(v["matrix"][1][2].as_f64().unwrap(), b.get(1, 2));
    assert_eq!(lmgc(&["sample-noise", "--dim", "2", "--epsilon", "0", "--seed", "9"]).status.code(), Some(2));
}

#[test]
fn train_config_file_is_read_and_flags_override_it() {
    let ws = Workspace::new();
    ws.blobs("train.csv", 8.0);
    std::fs::write(
        ws.path("cfg.json"),
        r#"{"epsilon": 4.0, "seed": 3, "lambda": 0.5, "optimizer": {"max_iters": 50}}"#,
    )
    .unwrap();
    let out = lmgc(&[
        "train",
        "--data",
        &ws.arg("train.csv"),
        "--model",
        &ws.arg("m.json"),
        "--config",
        &ws.arg("cfg.json"),
        "--lambda",
        "0.25",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&ws.path("m.report.json"));
    assert_eq!(r["epsilon"], 4.0);
    assert_eq!(r["seed"], 3);
    assert_eq!(r["lambda"], 0.25);
    assert!(r["iterations"].as_u64().unwrap() <= 50);

    std::fs::write(ws.path("bad.json"), r#"{"epsilonn": 4.0}"#).unwrap();
    let out =
        lmgc(&["train", "--data", &ws.arg("train.csv"), "--model", &ws.arg("m.json"), "--config", &ws.arg("bad.json")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_csv_and_summary() {
    let ws = Workspace::new();
    let out = lmgc(&[
        "sweep",
        "--out",
        &ws.arg("s.csv"),
        "--summary",
        &ws.arg("s.json"),
        "--epsilons",
        "1,10",
        "--trials",
        "2",
        "--n",
        "60",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(ws.path("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let s = json(&ws.path("s.json"));
    assert_eq!(s["per_epsilon"].as_array().unwrap().len(), 2);
    assert_eq!(s["failed_cells"], 0);
}
