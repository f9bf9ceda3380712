use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdzsl::io::container::read_matrix;
use cdzsl::io::manifest::read_labels;

const SMALL_SYNTH: &str = "feature_dim = 12\nattribute_dim = 8\natoms = 16\nseen_samples = 120\n\
unseen_classes = 4\ntest_samples = 40\ncode_sparsity = 2\nnoise = 0.005\nseparation = 0.5\n\
seed = 3\nseen_classes = 60\n";

const SMALL_PIPELINE: &str = "atoms = 16\nouter_iterations = 4\ninner_alternations = 5\nknn_k = 5\n";

fn cdzsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdzsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// synth-gen, train, predict, classify and evaluate into `root`; returns the
/// files whose bytes must be reproducible.
fn small_pipeline(root: &Path) -> Vec<PathBuf> {
    let synth = write(root, "synth.txt", SMALL_SYNTH);
    let config = write(root, "pipeline.txt", SMALL_PIPELINE);
    let data = root.join("data");
    let ck = root.join("ck");
    let out = cdzsl(&["synth-gen", "--config", s(&synth), "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let manifest = data.join("manifest.txt");
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), manifest.display().to_string());

    let out = cdzsl(&["train", "--manifest", s(&manifest), "--out", s(&ck), "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let pred = root.join("pred.cdzm");
    let out = cdzsl(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--features",
        s(&data.join("test_features.cdzm")),
        "--prototypes",
        s(&data.join("unseen_prototypes.cdzm")),
        "--method",
        "aaw",
        "--out",
        s(&pred),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let labels = root.join("labels.cdzm");
    let out = cdzsl(&[
        "classify",
        "--predicted",
        s(&pred),
        "--prototypes",
        s(&data.join("unseen_prototypes.cdzm")),
        "--prototype-labels",
        s(&data.join("unseen_labels.cdzm")),
        "--method",
        "taaw",
        "--config",
        s(&config),
        "--out",
        s(&labels),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let rep = root.join("rep");
    let out = cdzsl(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--checkpoint",
        s(&ck),
        "--method",
        "aag,aaw,taaw",
        "--config",
        s(&config),
        "--out",
        s(&rep),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("TAAw"));

    let mut files = vec![
        ck.join("dx.cdzm"),
        ck.join("dz.cdzm"),
        ck.join("config.txt"),
        ck.join("trace.txt"),
        pred,
        labels,
        rep.join("report.txt"),
        rep.join("table.txt"),
    ];
    let mut data_files: Vec<PathBuf> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).collect();
    data_files.sort();
    files.extend(data_files);
    files
}

#[test]
fn pipeline_runs_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = small_pipeline(a.path());
    let fb = small_pipeline(b.path());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }

    let pred = read_matrix(a.path().join("pred.cdzm")).unwrap();
    assert_eq!(pred.dim(), (8, 40));
    let labels = read_labels(&a.path().join("labels.cdzm")).unwrap();
    let unseen = read_labels(&a.path().join("data/unseen_labels.cdzm")).unwrap();
    assert_eq!(labels.len(), 40);
    assert!(labels.iter().all(|l| unseen.contains(l)));

    let report = fs::read_to_string(a.path().join("rep/report.txt")).unwrap();
    for section in ["[experiment]", "[config]", "[aag]", "[aaw]", "[taaw]"] {
        assert!(report.contains(section), "missing {section}");
    }
}

#[test]
fn missing_manifest_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.txt");
    let out = cdzsl(&["evaluate", "--manifest", s(&missing), "--out", s(&dir.path().join("rep"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(s(&missing)), "{}", stderr(&out));
}

#[test]
fn pac_bound_slack_query_prints_two() {
    let out = cdzsl(&["pac-bound", "--delta", "0.5", "--epsilon", "1e6", "--p", "2", "--r", "2", "-L", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "M=2");
}

#[test]
fn pac_bound_rejects_bad_query() {
    let out = cdzsl(&["pac-bound", "--delta", "1.5", "--epsilon", "0.5", "--p", "2", "--r", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("delta") || stderr(&out).contains("confidence"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cdzsl(&[]).status.code(), Some(1));
    assert_eq!(cdzsl(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(cdzsl(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.txt", "atoms = 8\nlamda = 0.1\n");
    let out = cdzsl(&[
        "train",
        "--manifest",
        s(&dir.path().join("m.txt")),
        "--out",
        s(&dir.path().join("ck")),
        "--config",
        s(&config),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lamda"), "{}", stderr(&out));
}

#[test]
fn fatal_nonconvergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write(dir.path(), "synth.txt", SMALL_SYNTH);
    let config = write(
        dir.path(),
        "pipeline.txt",
        "atoms = 16\nouter_iterations = 1\nlasso_max_iterations = 1\n",
    );
    let data = dir.path().join("data");
    assert_eq!(cdzsl(&["synth-gen", "--config", s(&synth), "--out", s(&data)]).status.code(), Some(0));
    let manifest = data.join("manifest.txt");
    let ck = dir.path().join("ck");
    let args = ["train", "--manifest", s(&manifest), "--out", s(&ck), "--config", s(&config)];
    assert_eq!(cdzsl(&args).status.code(), Some(0));
    let mut fatal = args.to_vec();
    fatal.push("--fatal-nonconvergence");
    let out = cdzsl(&fatal);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("train") || stderr(&out).contains("converge"), "{}", stderr(&out));
}

#[test]
fn corrupt_container_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    fs::create_dir_all(&ck).unwrap();
    fs::write(ck.join("dx.cdzm"), b"CDZ").unwrap();
    let out = cdzsl(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--features",
        s(&dir.path().join("f.cdzm")),
        "--method",
        "aag",
        "--out",
        s(&dir.path().join("p.cdzm")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
