use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dre::data::{load_dataset, save_dataset, DatasetFormat};
use dre::synth::{generate, SynthConfig};
use dre::Dataset;
use serde_json::Value;

fn dre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dre")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dre(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_errors(schema_file: &str, instance: &Value) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema_file);
    let schema = read_json(&path);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let result = match compiled.validate(instance) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    result
}

/// Small synthetic dataset written through the CLI.
fn small_synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let stem = dir.join(name);
    let mut args = vec![
        "synth", "--out", s(&stem), "--n-per-class", "24", "--n-timesteps", "48", "--seed", "5",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    stem
}

fn train_small(dir: &Path, data: &Path, name: &str, seed: &str) -> PathBuf {
    let model = dir.join(name);
    ok(&[
        "train", "--data", s(data), "--out", s(&model), "--n-estimators", "2", "--num-features", "168",
        "--seed", seed,
    ]);
    model
}

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn synth_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("bench");
    ok(&["synth", "--out", s(&stem), "--n-per-class", "250", "--n-timesteps", "64", "--seed", "1"]);
    let data = load_dataset(&stem, DatasetFormat::Binary).unwrap();
    assert_eq!(data.n_instances(), 500);
    assert_eq!(data.n_channels(), 4);
    assert_eq!(data.n_timesteps(), 64);
    assert_eq!(data.class_counts(), [250, 250]);
}

#[test]
fn invalid_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("x");
    let out = dre(&["synth", "--out", s(&stem), "--theta", "91"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta"));

    let data = small_synth(dir.path(), "d", &[]);
    let out = dre(&["train", "--data", s(&data), "--out", s(&dir.path().join("m")), "--n-estimators", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = dre(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dre(&["--jobs", "0", "synth", "--out", s(&stem)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dre(&[
        "train", "--data", s(&dir.path().join("absent")), "--out", s(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn channel_mismatch_names_both_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let model = train_small(dir.path(), &data, "m", "3");

    let full = load_dataset(&data, DatasetFormat::Binary).unwrap();
    let (c, t) = (full.n_channels(), full.n_timesteps());
    let mut values = Vec::new();
    for i in 0..full.n_instances() {
        values.extend_from_slice(&full.instance(i)[..(c - 1) * t]);
    }
    let three = Dataset::new(values, c - 1, t, full.labels().to_vec()).unwrap();
    let three_path = dir.path().join("three");
    save_dataset(&three, &three_path).unwrap();

    let out = dre(&[
        "predict", "--model", s(&model), "--data", s(&three_path), "--out", s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("expects 4 channels") && err.contains("has 3"), "{err}");
}

#[test]
fn predict_and_relevance_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let model = train_small(dir.path(), &data, "m", "3");

    let pred = dir.path().join("pred.csv");
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(&pred)]);
    let (header, rows) = parse_csv(&pred);
    assert_eq!(header, ["instance_id", "prob_positive", "predicted_label"]);
    assert_eq!(rows.len(), 48);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        let p: f64 = r[1].parse().unwrap();
        let label: u8 = r[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(label, u8::from(p >= 0.5));
    }

    let rel = dir.path().join("rel.csv");
    ok(&["relevance", "--model", s(&model), "--out", s(&rel)]);
    let (header, rows) = parse_csv(&rel);
    assert_eq!(header, ["channel_name", "relevance", "member_000", "member_001"]);
    assert_eq!(rows.len(), 4);
    for col in 1..header.len() {
        let sum: f64 = rows.iter().map(|r| r[col].parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "column {} sums to {sum}", header[col]);
    }
    assert_eq!(rows[0][0], "ch1");
}

#[test]
fn training_report_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let model = train_small(dir.path(), &data, "m", "3");
    let report = read_json(&model.join("training_report.json"));
    let errors = schema_errors("training_report.schema.json", &report);
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["members"].as_array().unwrap().len(), 2);
    let w: f64 = report["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn evaluate_reports_best_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let model = train_small(dir.path(), &data, "m", "3");
    let out = dir.path().join("eval");
    ok(&[
        "evaluate", "--model", s(&model), "--data", s(&data), "--out", s(&out), "--best-threshold",
    ]);
    let report = read_json(&out.join("metrics.json"));
    let errors = schema_errors("evaluation_report.schema.json", &report);
    assert!(errors.is_empty(), "{errors:?}");
    let best = &report["best_threshold"];
    assert!(best["threshold"].is_number());
    assert!(best["metrics"]["accuracy"].as_f64().unwrap() >= report["metrics"]["accuracy"].as_f64().unwrap());
    for f in ["roc.csv", "relevance.csv", "predictions.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let (header, rows) = parse_csv(&out.join("roc.csv"));
    assert_eq!(header, ["threshold", "fpr", "tpr"]);
    assert_eq!(&rows.last().unwrap()[1..], ["1", "1"]);
}

#[test]
fn loso_one_fold_per_subject() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &["--n-subjects", "3"]);
    let out = dir.path().join("loso");
    ok(&[
        "loso", "--data", s(&data), "--out", s(&out), "--n-estimators", "2", "--num-features", "168",
        "--seed", "4",
    ]);
    let report = read_json(&out.join("loso_report.json"));
    let errors = schema_errors("loso_report.schema.json", &report);
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["n_folds"], 3);
    let folds = report["folds"].as_array().unwrap();
    let subjects: Vec<i64> = folds.iter().map(|f| f["subject"].as_i64().unwrap()).collect();
    assert_eq!(subjects, [0, 1, 2]);
    let tested: u64 = folds.iter().map(|f| f["n_test"].as_u64().unwrap()).sum();
    assert_eq!(tested, 48);
    for f in folds {
        assert_eq!(f["n_train"].as_u64().unwrap() + f["n_test"].as_u64().unwrap(), 48);
    }
    let (header, rows) = parse_csv(&out.join("relevance.csv"));
    assert_eq!(header, ["channel_name", "relevance", "subject_0", "subject_1", "subject_2"]);
    assert_eq!(rows.len(), 4);
    let (_, probs) = parse_csv(&out.join("probabilities.csv"));
    assert!(probs.iter().all(|r| !r[3].is_empty()));
}

#[test]
fn loso_without_subjects_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let out = dre(&["loso", "--data", s(&data), "--out", s(&dir.path().join("l"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"seed": 9, "n_estimators": 3, "num_features": 168, "c": 0.2, "synth": {"theta": 30}}"#,
    )
    .unwrap();
    let model = dir.path().join("m");
    ok(&[
        "--config", s(&config), "train", "--data", s(&data), "--out", s(&model), "--n-estimators", "2",
    ]);
    let report = read_json(&model.join("training_report.json"));
    assert_eq!(report["config"]["n_estimators"], 2);
    assert_eq!(report["config"]["seed"], 9);
    assert_eq!(report["config"]["c"], 0.2);
    assert_eq!(report["members"].as_array().unwrap().len(), 2);

    let unknown = dir.path().join("bad.json");
    fs::write(&unknown, r#"{"n_trees": 3}"#).unwrap();
    let out = dre(&["--config", s(&unknown), "train", "--data", s(&data), "--out", s(&dir.path().join("m2"))]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn config_file_drives_synth() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"seed": 3, "synth": {"n_per_class": 7, "n_timesteps": 20}}"#).unwrap();
    let stem = dir.path().join("d");
    ok(&["--config", s(&config), "synth", "--out", s(&stem), "--n-timesteps", "30"]);
    let data = load_dataset(&stem, DatasetFormat::Binary).unwrap();
    assert_eq!((data.n_instances(), data.n_timesteps()), (14, 30));
}

#[test]
fn missing_seed_is_generated_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let model = dir.path().join("m");
    let out = ok(&[
        "train", "--data", s(&data), "--out", s(&model), "--n-estimators", "1", "--num-features", "168",
    ]);
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().find(|l| l.starts_with("seed: ")).expect("seed line");
    let printed: u64 = line["seed: ".len()..].trim().parse().unwrap();
    let report = read_json(&model.join("training_report.json"));
    assert_eq!(report["config"]["seed"].as_u64(), Some(printed));
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "training_report.json" {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_same_model_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let a = train_small(dir.path(), &data, "a", "8");
    let b = train_small(dir.path(), &data, "b", "8");
    let c = train_small(dir.path(), &data, "c", "9");
    let (ca, cb, cc) = (dir_contents(&a), dir_contents(&b), dir_contents(&c));
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
    assert_ne!(ca, cc);
}

#[test]
fn csv_long_input_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), "d", &[]);
    let loaded = load_dataset(&data, DatasetFormat::Binary).unwrap();
    let csv = dir.path().join("d.csv");
    dre::data::save_dataset_csv(&loaded, &csv).unwrap();
    let model = train_small(dir.path(), &data, "m", "3");
    let (pb, pc) = (dir.path().join("b.csv"), dir.path().join("c.csv"));
    ok(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(&pb)]);
    ok(&["predict", "--model", s(&model), "--data", s(&csv), "--format", "csv-long", "--out", s(&pc)]);
    assert_eq!(fs::read(&pb).unwrap(), fs::read(&pc).unwrap());
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_synth(dir.path(), "a", &["--theta", "20"]);
    let b = small_synth(dir.path(), "b", &["--theta", "20"]);
    let bin = |p: &Path| fs::read(p.with_extension("bin")).unwrap();
    assert_eq!(bin(&a), bin(&b));
    let generated = generate(&SynthConfig {
        theta: 20.0,
        n_per_class: 24,
        n_timesteps: 48,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let loaded = load_dataset(&a, DatasetFormat::Binary).unwrap();
    assert_eq!(loaded.values(), generated.values());
    assert_eq!(loaded.labels(), generated.labels());
}
