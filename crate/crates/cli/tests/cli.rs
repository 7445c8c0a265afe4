use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn perhar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perhar"))
        .args(args)
        .output()
        .expect("spawn perhar")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYNTH: &str = "n_subjects = 4\nn_classes = 3\nn_channels = 3\nsample_rate = 25.0\nseconds_per_class = 24.0\nseed = 2\n";

fn config(data: &Path, kind: &str) -> String {
    format!(
        r#"[dataset]
name = "canonical_csv"
root = "{}"

[preprocessing]
sample_rate = 0
window_seconds = 2.0
overlap = 0.5

[model]
kind = "{kind}"
blocks = [{{ filters = 8, kernel = 5, stride = 1 }}, {{ filters = 8, kernel = 3, stride = 1 }}]
pef_trees = 20

[training]
epochs = 2
batch_size = 16
validate = false

[evaluation]
models = ["pef", "ptn"]
k_folds = 2
knn_k = 3
"#,
        p(data)
    )
}

/// Writes a synthetic canonical CSV and returns its path.
fn dataset(dir: &Path) -> PathBuf {
    let spec = dir.join("synth.toml");
    fs::write(&spec, SYNTH).unwrap();
    let data = dir.join("data.csv");
    let o = perhar(&["synth", "--spec", p(&spec), "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_subcommands_and_flags() {
    let o = perhar(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["ingest", "train", "embed", "classify", "evaluate", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let o = perhar(&["evaluate", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for flag in ["--config", "--experiment", "--out", "--jobs", "--seed"] {
        assert!(text.contains(flag), "{flag} missing from evaluate help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = perhar(&["evaluate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn missing_config_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[training]\nepochs = 1\n");
    let o = perhar(&["evaluate", "--config", p(&cfg), "--experiment", "classification", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));
}

#[test]
fn unknown_experiment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(dir.path(), "c.toml", &config(&data, "ptn"));
    let o = perhar(&["evaluate", "--config", p(&cfg), "--experiment", "nope", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.csv");
    let cfg = write_config(dir.path(), "c.toml", &config(&missing, "ptn"));
    let o = perhar(&["train", "--config", p(&cfg), "--out", p(&dir.path().join("m.bin"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_embed_classify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset(d);
    let cfg = write_config(d, "ptn.toml", &config(&data, "ptn"));
    let model = d.join("ptn.bin");
    let log = d.join("log.csv");
    let o = perhar(&["train", "--config", p(&cfg), "--out", p(&model), "--log", p(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let id = stdout(&o).trim().to_string();
    assert_eq!(id.len(), 16);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);

    let emb = d.join("emb.csv");
    let refs = d.join("refs.bin");
    let o = perhar(&["embed", "--model", p(&model), "--in", p(&data), "--out", p(&emb), "--reference-out", p(&refs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&emb).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("subject_id,recording_id,start_index,activity_id,e0"));
    assert!(header.ends_with(",e7"));

    let pred = d.join("pred.csv");
    let o = perhar(&["classify", "--model", p(&model), "--reference", p(&refs), "--in", p(&data), "--out", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(&pred).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (truth, predicted, ood) = (col("activity_id"), col("predicted"), col("ood_score"));
    let mut n = 0;
    let mut correct = 0;
    for row in reader.records() {
        let row = row.unwrap();
        n += 1;
        correct += usize::from(row[truth] == row[predicted]);
        assert!(row[ood].parse::<f64>().unwrap() >= 0.0);
    }
    // References are the query windows themselves, so the vote is near exact.
    assert!(correct as f64 > 0.9 * n as f64, "{correct}/{n}");

    // A model trained with another seed must not accept these references.
    let other = d.join("other.bin");
    let o = perhar(&["train", "--config", p(&cfg), "--out", p(&other), "--seed", "99"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let other_id = stdout(&o).trim().to_string();
    assert_ne!(id, other_id);
    let o = perhar(&["classify", "--model", p(&other), "--reference", p(&refs), "--in", p(&data), "--out", p(&pred)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&id) && err.contains(&other_id), "{err}");
}

#[test]
fn fcn_classifies_without_references() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset(d);
    let cfg = write_config(d, "fcn.toml", &config(&data, "fcn"));
    let model = d.join("fcn.bin");
    let o = perhar(&["train", "--config", p(&cfg), "--out", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pred = d.join("pred.csv");
    let o = perhar(&["classify", "--model", p(&model), "--in", p(&data), "--out", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&pred).unwrap().lines().count() > 1);
}

#[test]
fn evaluate_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = dataset(d);
    let cfg = write_config(d, "eval.toml", &config(&data, "ptn"));
    let out = d.join("report");
    let o = perhar(&["evaluate", "--config", p(&cfg), "--experiment", "classification", "--out", p(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "subjects.csv", "boxplot.csv", "timing.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "classification");
    let models: Vec<&str> = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    assert_eq!(models, vec!["pef", "ptn"]);
    // 4 subjects appear once per model.
    assert_eq!(fs::read_to_string(out.join("subjects.csv")).unwrap().lines().count(), 1 + 2 * 4);
}
