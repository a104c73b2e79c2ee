mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{fixture, MNIST_IMAGES, MNIST_LABELS};
use qldm_core::cli::ExperimentConfig;
use qldm_core::data::{self, RawImages};

fn qldm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qldm"))
        .args(args)
        .env("QLDM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qldm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> (i32, String) {
    let out = qldm(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stderr).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// First `n` fixture images and labels written as plain IDX files.
fn small_idx(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let raw = data::load_idx_images(fixture(MNIST_IMAGES), true).unwrap();
    let labels = data::load_idx_labels(fixture(MNIST_LABELS)).unwrap();
    let small = RawImages {
        count: n,
        rows: raw.rows,
        cols: raw.cols,
        pixels: raw.pixels[..n * raw.rows * raw.cols].to_vec(),
    };
    let (img, lab) = (dir.join("images.idx"), dir.join("labels.idx"));
    fs::write(&img, data::encode_idx_images(&small)).unwrap();
    fs::write(&lab, data::encode_idx_labels(&labels[..n])).unwrap();
    (img, lab)
}

fn write_config(dir: &Path, out: &Path) -> PathBuf {
    let cfg = serde_json::json!({
        "schema_version": 1,
        "output_dir": out,
        "latent_dim": 4,
        "autoencoder": {"hidden": 16, "epochs": 1, "batch_size": 16},
        "train": {"epochs": 2, "batch_size": 8, "T": 10},
        "sample": {"n": 30},
        "evaluate": {"kid_subset_size": 10, "kid_subsets": 5},
    });
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn sidecar_hash(artifact: &Path) -> String {
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(qldm_core::cli::sidecar_path(artifact)).unwrap()).unwrap();
    meta["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = dir.join("run");
    let (img, lab) = small_idx(dir, 200);
    let cfg = write_config(dir, &run);
    let c = s(&cfg);

    ok(&["train-autoencoder", "--config", c, "--images", s(&img)]);
    let ae = run.join("autoencoder.qae");
    assert!(ae.exists());

    ok(&["encode", "--config", c, "--images", s(&img), "--labels", s(&lab), "--fraction", "0.2"]);
    let latents = run.join("latents.qlat");
    let lat = data::load_latents(&latents).unwrap();
    assert_eq!((lat.len(), lat.dim), (40, 4));
    assert_eq!(lat.labels.as_ref().map(Vec::len), Some(40));

    ok(&["train", "--config", c, "--variant", "Classical", "--variant", "BasicQ"]);
    let loss = fs::read(run.join("Classical/loss.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&loss).lines().count(), 1 + 2 * 5);

    // Same config and seed in a second directory gives the same bytes.
    let run2 = dir.join("run2");
    ok(&["train", "--config", c, "--variant", "Classical", "--out", s(&run2), "--latents", s(&latents)]);
    assert_eq!(fs::read(run2.join("Classical/loss.csv")).unwrap(), loss);

    let pgm = dir.join("pgm");
    ok(&["sample", "--config", c, "--variant", "Classical", "--autoencoder", s(&ae), "--pgm-dir", s(&pgm)]);
    let samples = run.join("Classical/samples.qlat");
    assert_eq!(data::load_latents(&samples).unwrap().len(), 30);
    let first = fs::read(pgm.join("sample_0000.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n28 28\n255\n"));
    assert_eq!(first.len(), b"P5\n28 28\n255\n".len() + 784);
    ok(&["sample", "--config", c, "--variant", "BasicQ"]);

    let metrics = dir.join("metrics.csv");
    for v in ["Classical", "BasicQ"] {
        let gen = run.join(v).join("samples.qlat");
        ok(&["evaluate", "--config", c, "--variant", v, "--generated", s(&gen), "--reference", s(&latents), "--output", s(&metrics)]);
    }
    let text = fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,variant,frechet,kid_mean,kid_std");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,Classical,"));

    let same = dir.join("same.csv");
    ok(&["evaluate", "--config", c, "--generated", s(&latents), "--reference", s(&latents), "--output", s(&same)]);
    let row = fs::read_to_string(&same).unwrap();
    let fd: f64 = row.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(fd.abs() < 1e-8, "self frechet {fd}");

    let svg = dir.join("metrics.svg");
    ok(&["plot", s(&metrics), "--output", s(&svg), "--x", "epoch"]);
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 2);
    let loss_svg = dir.join("loss.svg");
    ok(&["plot", s(&run.join("Classical/loss.csv")), s(&run.join("BasicQ/loss.csv")), "--output", s(&loss_svg), "--db"]);
    assert_eq!(fs::read_to_string(&loss_svg).unwrap().matches("<polyline").count(), 2);

    // Sidecars carry the hash of the effective config, overrides included.
    let mut expected = ExperimentConfig::load(&cfg).unwrap();
    assert_eq!(sidecar_hash(&ae), expected.hash());
    expected.data.fraction = 0.2;
    assert_eq!(sidecar_hash(&latents), expected.hash());
    for artifact in [run.join("Classical/final.qdm"), samples, metrics, pgm.join("sample_0000.pgm")] {
        let hash = sidecar_hash(&artifact);
        assert!(hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit()), "{}", artifact.display());
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let (code, err) = fails(&["train", "--latents", "/nonexistent/latents.qlat", "--variant", "Classical"]);
    assert_eq!(code, 4);
    assert!(err.starts_with("error[io]"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_variant_lists_valid_names() {
    let (code, err) = fails(&["train", "--variant", "5zQ"]);
    assert_eq!(code, 2);
    for name in ["Classical", "BasicQ", "3zQ", "3xQ", "4zQ", "4xQ"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn bad_config_is_rejected_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    fs::write(&path, r#"{"schema_version": 1, "bogus": true}"#).unwrap();
    let (code, err) = fails(&["train", "--config", s(&path)]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]"), "{err}");
    fs::write(&path, r#"{"schema_version": 2}"#).unwrap();
    assert_eq!(fails(&["train", "--config", s(&path)]).0, 2);
}

#[test]
fn wrong_file_type_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fake.qlat");
    fs::write(&path, b"nope, not latents").unwrap();
    let (code, err) = fails(&["evaluate", "--generated", s(&path), "--reference", s(&path)]);
    assert_eq!(code, 5);
    assert!(err.starts_with("error[format]"), "{err}");
}

#[test]
fn empty_csv_cannot_be_plotted() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let header_only = tmp.path().join("header.csv");
    fs::write(&header_only, "iteration,loss\n").unwrap();
    let out = tmp.path().join("x.svg");
    fails(&["plot", s(&empty), "--output", s(&out)]);
    fails(&["plot", s(&header_only), "--output", s(&out)]);
    assert!(!out.exists());
}
