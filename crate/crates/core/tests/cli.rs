use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polycascade::cli::{checkpoint, evaluate};
use polycascade::data::{one_hot, synth_classification, write_delimited, Dataset};
use polycascade::trainer::{accuracy, Model};
use polycascade::{CascadeState, KernelConstants, Matrix, PackageState};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polycascade"))
        .args(args)
        .output()
        .expect("run polycascade")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_default_passes() {
    let out = bin(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.matches("layer ").count(), 3);
    assert_eq!(text, stdout(&bin(&["gradcheck"])));
}

#[test]
fn gradcheck_zero_tolerance_fails() {
    let out = bin(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst entries"));
}

#[test]
fn zero_epochs_writes_header_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let ckpt = dir.path().join("m.ckpt");
    let out = bin(&[
        "train", "--synth", "sine", "--synth-points", "50", "--dims", "1,3,1", "--k", "6",
        "--epochs", "0", "--metrics", p(&metrics), "--checkpoint", p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("trainable parameters: 24"));
    assert_eq!(fs::read_to_string(&metrics).unwrap(), "epoch,train_mse,eval_accuracy,wall_seconds\n");
    assert!(checkpoint::load(&ckpt).is_ok());
}

fn train_run(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let metrics = dir.join(format!("{tag}.csv"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let out = bin(&[
        "train", "--synth", "sectors3", "--synth-points", "120", "--dims", "2,3,1", "--k", "12",
        "--epochs", "2", "--batch-size", "40", "--alpha", "5", "--seed", "9", "--no-wall-clock",
        "--metrics", p(&metrics), "--checkpoint", p(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (fs::read(metrics).unwrap(), fs::read(ckpt).unwrap())
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_run(dir.path(), "a");
    let b = train_run(dir.path(), "b");
    assert_eq!(a, b);
    let csv = String::from_utf8(a.0).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(",0"));
    assert_eq!(lines[1].split(',').count(), 4);
}

/// A single package interpolating the training set exactly.
fn memorizing_model(ds: &Dataset) -> Model {
    let k = KernelConstants::default();
    let pkg = PackageState::new(ds.inputs.clone(), ds.targets.clone(), 0.0, &k).unwrap();
    Model::Cascade(CascadeState::new(vec![pkg], k).unwrap())
}

#[test]
fn eval_of_memorized_fixture_is_perfect() {
    let ds = synth_classification(40, 3, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let ckpt = dir.path().join("d.ckpt");
    write_delimited(&ds, &csv).unwrap();
    checkpoint::save(&memorizing_model(&ds), &ckpt).unwrap();
    let out = bin(&["eval", "--checkpoint", p(&ckpt), "--data-csv", p(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "accuracy 1");

    let pred = dir.path().join("pred.csv");
    let out = bin(&["predict", "--checkpoint", p(&ckpt), "--data-csv", p(&csv), "--output", p(&pred)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&pred).unwrap().lines().count(), 40);
}

#[test]
fn eval_width_mismatch_is_config_error() {
    let ds = synth_classification(20, 3, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("d.ckpt");
    checkpoint::save(&memorizing_model(&ds), &ckpt).unwrap();
    let csv = dir.path().join("wide.csv");
    fs::write(&csv, "1,2,3,0,0,1\n").unwrap();
    let out = bin(&["eval", "--checkpoint", p(&ckpt), "--data-csv", p(&csv)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn accuracy_matches_confusion_tally() {
    let ds = synth_classification(200, 3, 3).unwrap();
    let half = ds.head(60).unwrap();
    let model = memorizing_model(&half);
    let pred = model.predict(&ds.inputs).unwrap();
    let mut confusion = [[0usize; 3]; 3];
    for i in 0..ds.len() {
        let row = pred.row(i);
        let mut best = 0;
        for j in 1..3 {
            if row[j] > row[best] {
                best = j;
            }
        }
        let truth = ds.targets.row(i).iter().position(|&v| v == 1.0).unwrap();
        confusion[truth][best] += 1;
    }
    let diag: usize = (0..3).map(|c| confusion[c][c]).sum();
    let expected = diag as f64 / ds.len() as f64;
    assert_eq!(accuracy(&pred, &ds.targets), expected);
    assert_eq!(evaluate(&model, &ds).unwrap(), ("accuracy".to_string(), expected));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[model]\nunknown_key = 3\n").unwrap();
    assert_eq!(bin(&["train", "--config", p(&cfg)]).status.code(), Some(1));
    assert_eq!(bin(&["train", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(bin(&["train", "--synth", "sine"]).status.code(), Some(1));

    let missing = dir.path().join("missing.csv");
    let out = bin(&["train", "--data-csv", p(&missing), "--dims", "1,1", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));

    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"PHCS\x01\x00\x00\x00 definitely not a checkpoint body").unwrap();
    let csv = dir.path().join("x.csv");
    fs::write(&csv, "1,2\n").unwrap();
    assert_eq!(bin(&["eval", "--checkpoint", p(&ckpt), "--data-csv", p(&csv)]).status.code(), Some(2));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let metrics = dir.path().join("m.csv");
    fs::write(
        &cfg,
        format!(
            "[model]\nlayers = [{{ k = 10, n = 3 }}, {{ k = 10 }}]\n[train]\nepochs = 5\nbatch_size = 25\nalpha = 1.0\n[data]\nsynth = \"sine\"\nsynth_points = 100\n[output]\nmetrics = \"{}\"\n",
            p(&metrics)
        ),
    )
    .unwrap();
    let out = bin(&["train", "--config", p(&cfg), "--epochs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 3);
}

#[test]
fn one_hot_fixture_sanity() {
    let m: Matrix = one_hot(&[2, 0], 3).unwrap();
    assert_eq!(m.row(0), &[0.0, 0.0, 1.0]);
}
