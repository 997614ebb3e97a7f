// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs of the `deepsom` binary on a small synthetic set.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{sha256_hex, strokes, write_idx};

fn deepsom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepsom"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deepsom(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    out: String,
    common: Vec<String>,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (ti, tl) = write_idx(&strokes(60, 11), dir.path(), "train");
        let (vi, vl) = write_idx(&strokes(30, 12), dir.path(), "val");
        let out = dir.path().join("out").display().to_string();
        let common = [
            "--train-images",
            &ti.display().to_string(),
            "--train-labels",
            &tl.display().to_string(),
            "--val-images",
            &vi.display().to_string(),
            "--val-labels",
            &vl.display().to_string(),
            "--out-dir",
            &out,
            "--block-size",
            "60",
            "--validation-size",
            "30",
            "--pretrain-iterations",
            "40",
            "--seed",
            "3",
            "--no-timing",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        Fixture {
            _dir: dir,
            out,
            common,
        }
    }

    fn args<'a>(&'a self, head: &[&'a str]) -> Vec<&'a str> {
        head.iter()
            .copied()
            .chain(self.common.iter().map(String::as_str))
            .collect()
    }

    fn path(&self, name: &str) -> String {
        Path::new(&self.out).join(name).display().to_string()
    }
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let f = Fixture::new();
    ok(&f.args(&["pretrain"]));
    for name in [
        "pretrained.ckpt",
        "pretrain.csv",
        "manifest-pretrain.txt",
        "atlas/atlas_m00.pgm",
        "atlas/atlas_m48.pgm",
    ] {
        assert!(Path::new(&f.path(name)).exists(), "missing {name}");
    }
    let report = std::fs::read_to_string(f.path("pretrain.csv")).unwrap();
    assert_eq!(report.lines().count(), 6);
    assert!(report.starts_with("layer,similarity_before,similarity_after,updates\n"));

    let pretrained = f.path("pretrained.ckpt");
    let stdout = ok(&f.args(&["assign-labels", "--checkpoint-in", &pretrained]));
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("class=")).count(),
        10
    );
    let labels = std::fs::read_to_string(f.path("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 11);

    let labeled = f.path("labeled.ckpt");
    ok(&f.args(&["train", "--checkpoint-in", &labeled, "--blocks", "1"]));
    let curve = std::fs::read_to_string(f.path("curve_r0.7.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows[0], "block,error_rate,ap_invocations,seconds");
    assert_eq!(rows.len(), 3, "baseline row plus one block");
    assert!(rows[1].starts_with("0,") && rows[2].starts_with("1,"));
    assert!(rows[2].ends_with(",0.000"), "timing disabled: {}", rows[2]);

    let trained = f.path("trained_r0.7.ckpt");
    let stdout = ok(&f.args(&[
        "eval",
        "--checkpoint-in",
        &trained,
        "--set",
        "export_usage=true",
    ]));
    assert!(stdout.starts_with("error_rate="));
    let eval = std::fs::read_to_string(f.path("eval.txt")).unwrap();
    let e: f64 = eval
        .trim()
        .trim_start_matches("error_rate=")
        .parse()
        .unwrap();
    let last: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(
        (e - last).abs() < 1e-6,
        "eval {e} disagrees with curve {last}"
    );
    let usage = std::fs::read_to_string(f.path("usage.csv")).unwrap();
    let total: u64 = usage
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 30);
    assert!(Path::new(&f.path("usage.pgm")).exists());

    ok(&f.args(&[
        "export",
        "stimulus",
        "--checkpoint-in",
        &trained,
        "--class",
        "3",
    ]));
    ok(&f.args(&[
        "export",
        "stimulus",
        "--checkpoint-in",
        &trained,
        "--layer",
        "1",
        "--module",
        "24",
        "--neuron",
        "7",
    ]));
    assert!(Path::new(&f.path("stimulus_l1_m24_n7.pgm")).exists());

    let merged = f.path("curves.csv");
    ok(&f.args(&[
        "export",
        "curves",
        &f.path("curve_r0.7.csv"),
        &f.path("curve_r0.7.csv"),
        "--output",
        &merged,
    ]));
    assert_eq!(std::fs::read_to_string(&merged).unwrap().lines().count(), 3);

    let manifest = std::fs::read_to_string(f.path("manifest-train.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed=3"), "{manifest}");
    assert!(manifest.lines().any(|l| l == "blocks=1"), "{manifest}");
}

#[test]
fn same_manifest_gives_same_checkpoint() {
    let f = Fixture::new();
    ok(&f.args(&["pretrain", "--set", "export_atlas=false"]));
    let first = sha256_hex(&std::fs::read(f.path("pretrained.ckpt")).unwrap());
    let manifest = f.path("manifest-pretrain.txt");
    let again = f.path("again.ckpt");
    ok(&[
        "pretrain",
        "--config",
        &manifest,
        "--checkpoint-out",
        &again,
    ]);
    assert_eq!(first, sha256_hex(&std::fs::read(&again).unwrap()));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(deepsom(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        deepsom(&f.args(&["train", "--r", "1.5"])).status.code(),
        Some(1)
    );
    let missing = f.path("nope.ckpt");
    let out = deepsom(&f.args(&["eval", "--checkpoint-in", &missing]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
    assert_eq!(
        deepsom(&["pretrain", "--out-dir", &f.out]).status.code(),
        Some(1)
    );
}
