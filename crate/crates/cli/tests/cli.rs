use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "model.hidden_dim=16\nmodel.heads=2\nmodel.mlp_dim=16\nmodel.transformer_depth=1\ntrain.epochs=3\ntrain.patience=2\n";

fn toy_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_logs.csv")
}

fn solgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solgraph")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = solgraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.kv");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn no_temp_files(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(!name.contains(".tmp"), "leftover {name}");
    }
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join("train");
    ok(&["train", "--data", s(&toy_csv()), "--config", s(&cfg), "--out", s(&out), "--test-fold", "0"]);
    out.join("model.ckpt")
}

#[test]
fn parse_dump_is_line_oriented() {
    let text = ok(&["parse", "--smiles", "c1ccncc1"]);
    let atoms = text.lines().filter(|l| l.starts_with("atom ")).count();
    let bonds = text.lines().filter(|l| l.starts_with("bond ")).count();
    assert_eq!((atoms, bonds), (6, 6));
    assert!(text.contains("atom 3 N"));
}

#[test]
fn predict_prints_one_line_per_smiles() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path());
    let text = ok(&["predict", "--checkpoint", s(&ckpt), "--smiles", "c1ccccc1"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let (smiles, value) = lines[0].split_once(',').unwrap();
    assert_eq!(smiles, "c1ccccc1");
    assert!(value.parse::<f64>().unwrap().is_finite());
}

#[test]
fn cv_writes_ten_folds_and_aggregate() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("cv");
    let summary = ok(&["cv", "--data", s(&toy_csv()), "--config", s(&cfg), "--out", s(&out), "--workers", "2"]);
    assert_eq!(summary.lines().count(), 1);
    let text = fs::read_to_string(out.join("cv_folds.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    for (i, row) in rows[..10].iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], i.to_string());
        assert_eq!(cells[1], ((i + 1) % 10).to_string());
        assert_eq!(cells[7], "true");
        assert!(cells[4].parse::<f64>().unwrap().is_finite());
    }
    assert!(rows[10].starts_with("mean,"));
    assert!(rows[11].starts_with("std,"));
    let plan = fs::read_to_string(out.join("folds.csv")).unwrap();
    assert_eq!(plan.lines().filter(|l| !l.starts_with("index")).count(), 36);
    no_temp_files(&out);
}

#[test]
fn resolved_config_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--data", s(&toy_csv()), "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    let resolved = a.join("config.kv");
    ok(&["train", "--data", s(&toy_csv()), "--config", s(&resolved), "--out", s(&b), "--workers", "1"]);
    for f in ["config.kv", "model.ckpt", "history.csv", "folds.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(&resolved).unwrap();
    assert!(text.contains("train.seed=7") && text.contains("model.seed=7"));
    assert!(text.contains("model.hidden_dim=16"));
}

#[test]
fn evaluate_and_explain_outputs() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path());
    let ev = dir.path().join("ev");
    let line = ok(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&toy_csv()), "--out", s(&ev)]);
    assert!(line.starts_with("evaluate: n 36"));
    let metrics = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("split,n,r2,rmse,mean_error\n"));
    let hist = fs::read_to_string(ev.join("histogram.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 36);

    let ez = dir.path().join("ez");
    ok(&["explain-zeroing", "--checkpoint", s(&ckpt), "--data", s(&toy_csv()), "--out", s(&ez)]);
    let z = fs::read_to_string(ez.join("zeroing.csv")).unwrap();
    assert_eq!(z.lines().filter(|l| l.starts_with("groups,")).count(), 8);
    assert_eq!(z.lines().filter(|l| l.starts_with("symbol,")).count(), 67);
    assert!(fs::read_to_string(ez.join("meta.kv")).unwrap().contains("dataset=toy_logs"));

    let el = dir.path().join("el");
    ok(&["explain-local", "--checkpoint", s(&ckpt), "--smiles", "c1ccccc1O", "--samples", "60", "--top-k", "5", "--out", s(&el)]);
    let local = fs::read_to_string(el.join("local.csv")).unwrap();
    assert_eq!(local.lines().next(), Some("feature,score,sign"));
    assert_eq!(local.lines().count(), 6);
    assert!(el.join("local_bars.csv").exists());
    no_temp_files(&el);
}

#[test]
fn featurize_container_reads_back() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("feat");
    ok(&["featurize", "--data", s(&toy_csv()), "--out", s(&out)]);
    let bytes = fs::read(out.join("features.bin")).unwrap();
    let graphs = solgraph::featurize::container::read_features(bytes.as_slice()).unwrap();
    assert_eq!(graphs.len(), 36);
    assert!(graphs.iter().all(|g| g.node_features.cols() == 92 && g.edge_features.cols() == 10));
}

#[test]
fn search_best_config_is_reusable() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("tiny.kv");
    fs::write(&cfg, format!("{}cv.k=4\ntrain.epochs=1\n", SMALL.replace("train.epochs=3\n", ""))).unwrap();
    let out = dir.path().join("search");
    ok(&["search", "--data", s(&toy_csv()), "--config", s(&cfg), "--trials", "1", "--out", s(&out)]);
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 2);
    let best = fs::read_to_string(out.join("best.kv")).unwrap();
    assert!(best.contains("train.epochs=1"));
}

#[test]
fn exit_codes() {
    assert_eq!(solgraph(&[]).status.code(), Some(1));
    assert_eq!(solgraph(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(solgraph(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let bad_key = solgraph(&["cv", "--data", s(&toy_csv()), "--set", "model.hiden_dim=3", "--out", s(&out)]);
    assert_eq!(bad_key.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("hiden_dim"));
    let missing = solgraph(&["cv", "--data", "/definitely/not/here.csv", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(solgraph(&["parse", "--smiles", "C1CC"]).status.code(), Some(2));
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    assert_eq!(solgraph(&["predict", "--checkpoint", s(&ckpt), "--smiles", "C"]).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_three() {
    let dir = TempDir::new().unwrap();
    let ckpt = trained(dir.path());
    let mut c = solgraph::model::load_checkpoint(&ckpt).unwrap();
    c.params.head_b2.set(0, 0, f32::NAN);
    let poisoned = dir.path().join("nan.ckpt");
    solgraph::model::save_checkpoint(&poisoned, &c).unwrap();
    assert_eq!(solgraph(&["predict", "--checkpoint", s(&poisoned), "--smiles", "CCO"]).status.code(), Some(3));
}
