//! End-to-end runs of the `flowrecon` binary on tiny problems.

use std::path::Path;
use std::process::{Command, Output};

use flowrecon_cli::experiment::{read_csv, MetricsRow, BEST_CSV, METRICS_CSV};
use flowrecon_cli::manifest::Manifest;

fn flowrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowrecon")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = flowrecon(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_PLAN: &str = r#"{
  "dataset": {"source": "synthetic", "recipe": {"kind": "traveling_vortices", "amplitude": 1.0,
              "wavenumbers": [1, 1], "phase_speed": 1.0, "seed": 0},
              "nx": 8, "ny": 8, "lx": 1.0, "ly": 1.0, "count": 40, "dt": 0.05},
  "split": {"mode": "sequential", "test_fraction": 0.2, "validation_fraction": 0.25, "seed": 0},
  "layouts": {"sensor_counts": [2, 3], "draws": 2, "seed": 5},
  "methods": ["scvae_l0", "scvae_lpos", "gpod_l0", "gpod_lpos"],
  "repeats": 2,
  "seed": 11,
  "scvae": {"arch": "tiny", "train": {"max_epochs": 3, "patience": 2, "batch_size": 8}, "eval_draws": 2},
  "gpod": {"r_max": 6, "lambda_grid": [0.001, 0.1]}
}"#;

#[test]
fn pipeline_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let out = ok(&[
        "gen",
        "--nx",
        "8",
        "--ny",
        "8",
        "--lx",
        "1",
        "--ly",
        "1",
        "--count",
        "30",
        "--kx",
        "1",
        "--out",
        s(&data),
    ]);
    assert!(out.contains("30 snapshots"));
    let parts = d.join("parts");
    ok(&["split", s(&data), "--out", s(&parts)]);
    ok(&["pod", s(&parts.join("train")), "--r", "4", "--out", s(&d.join("pod"))]);
    assert!(d.join("pod/basis.pod").exists());
    let g = ok(&["gpod", s(&parts), "--m", "3", "--seed", "4", "--r-max", "6", "--out", s(&d.join("gpod"))]);
    assert!(g.contains("GPOD r="), "{g}");
    let model_dir = d.join("model");
    ok(&[
        "train",
        s(&parts),
        "--sensors",
        s(&d.join("gpod/sensors.json")),
        "--arch",
        "tiny",
        "--epochs",
        "2",
        "--out",
        s(&model_dir),
    ]);
    let model = model_dir.join("model.frcmodel");
    let p = ok(&["predict", s(&model), "--input", s(&parts.join("test")), "--draws", "2", "--out", s(&d.join("pred"))]);
    assert!(p.contains("relative error"));
    let e = ok(&["eval", s(&d.join("pred/predictions")), s(&parts.join("test")), "--out", s(&d.join("eval"))]);
    assert!(e.contains("relative error"));
    ok(&[
        "uq",
        s(&model),
        "--input",
        s(&parts.join("test")),
        "--n-mc",
        "20",
        "--samples",
        "4",
        "--out",
        s(&d.join("uq")),
    ]);
    let uq: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("uq/uq.json")).unwrap()).unwrap();
    assert_eq!(uq["n_mc"], 20);
    assert!(d.join("uq/intervals.csv").exists());

    // Raw readings in a CSV give the same predictions as measuring truths.
    let model_loaded = flowrecon_scvae::ScvaeModel::load(&model).unwrap();
    let test = flowrecon_core::io::read_frc1(&parts.join("test")).unwrap();
    let mut csv = String::new();
    for x in test.states() {
        let m = model_loaded.measure(&x).unwrap();
        csv.push_str(&m.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    std::fs::write(d.join("m.csv"), csv).unwrap();
    ok(&["predict", s(&model), "--measurements", s(&d.join("m.csv")), "--draws", "2", "--out", s(&d.join("pred2"))]);
    let a = flowrecon_core::io::read_frc1(&d.join("pred/predictions")).unwrap().states();
    let b = flowrecon_core::io::read_frc1(&d.join("pred2/predictions")).unwrap().states();
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.iter().zip(y) {
            assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }
}

#[test]
fn experiment_outputs_verify_and_respect_data_roles() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, TINY_PLAN).unwrap();
    let out = dir.path().join("run");
    ok(&["experiment", "--plan", s(&plan), "--threads", "2", "--out", s(&out)]);
    for f in ["metrics.csv", "best_on_validation.csv", "boxplot_long.csv", "summary.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let rows: Vec<MetricsRow> = read_csv(&out.join(METRICS_CSV)).unwrap();
    // 2 layouts x 2 counts x (2 scvae x 2 repeats + 2 gpod).
    assert_eq!(rows.len(), 2 * 2 * 6);
    assert!(rows.iter().all(|r| r.status == "ok"), "{rows:?}");
    let best: Vec<MetricsRow> = read_csv(&out.join(BEST_CSV)).unwrap();
    assert_eq!(best.len(), 2 * 2 * 4);
    for b in &best {
        let group = rows.iter().filter(|r| r.method == b.method && r.layout == b.layout && r.m == b.m);
        let min = group.filter_map(|r| r.validation_error).fold(f64::INFINITY, f64::min);
        assert_eq!(b.validation_error, Some(min));
    }
    let manifest = Manifest::load(&out.join("manifest.json")).unwrap();
    assert!(manifest.test_access_is_evaluation_only());
    assert_eq!(manifest.seeds.len(), rows.len());
    let scvae = out.join("cells").join(&rows.iter().find(|r| r.method == "scvae_l0").unwrap().cell);
    assert!(scvae.join("model.frcmodel").exists() && scvae.join("training_log.csv").exists());
    let v = ok(&["verify", s(&out)]);
    assert!(v.contains(&format!("checked {} cells", rows.len())), "{v}");
}

#[test]
fn verify_flags_tampered_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let gpod_only = TINY_PLAN.replace(r#""scvae_l0", "scvae_lpos", "#, "");
    std::fs::write(&plan, gpod_only).unwrap();
    let out = dir.path().join("run");
    ok(&["experiment", "--plan", s(&plan), "--out", s(&out)]);
    let path = out.join(METRICS_CSV);
    let mut rows: Vec<MetricsRow> = read_csv(&path).unwrap();
    rows[0].mean_relative_error = rows[0].mean_relative_error.map(|e| e * (1.0 + 1e-6));
    flowrecon_cli::experiment::write_csv(&path, &rows).unwrap();
    let o = flowrecon(&["verify", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(flowrecon(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(flowrecon(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("missing");
    assert_eq!(flowrecon(&["eval", s(&missing), s(&missing)]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, TINY_PLAN.replace(r#""repeats": 2"#, r#""repeats": 0"#)).unwrap();
    assert_eq!(flowrecon(&["experiment", "--plan", s(&bad), "--out", s(&dir.path().join("o"))]).status.code(), Some(2));
    assert_eq!(
        flowrecon(&["gen", "--nx", "0", "--out", s(&dir.path().join("g"))]).status.code(),
        Some(2),
        "empty grids are rejected"
    );
}

#[test]
fn dry_run_writes_the_default_plan() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["experiment", "--dry-run", "--out", s(dir.path())]);
    let plan: flowrecon_cli::experiment::ExperimentPlan =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan, flowrecon_cli::experiment::ExperimentPlan::desk_default());
}
