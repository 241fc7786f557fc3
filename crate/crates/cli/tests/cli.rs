//! End-to-end tests of the `sgswe` binary: exit codes, strict config
//! handling, artifact layout, and rerun determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sgswe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgswe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sgswe-cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn preset_list_shows_catalog() {
    let out = sgswe(&["preset", "list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["sec5_1_accuracy", "sec5_4_plateau", "demo1d_augmented_energy"] {
        assert!(text.contains(name), "missing {name} in: {text}");
    }
}

#[test]
fn missing_scheme_is_a_config_error() {
    let dir = tmp("missing-scheme");
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{ "mesh": { "mx": 4, "my": 4 }, "domain": { "x": [0, 1], "y": [0, 1] },
             "basis": [ { "alpha": 0, "beta": 0, "order": 2 } ], "t_end": 0.01,
             "initial": { "w": "1" } }"#,
    )
    .unwrap();
    let out = sgswe(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("scheme"), "stderr: {err}");
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tmp("unknown-key");
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, r#"{ "preset": "demo1d_augmented_energy", "wibble": 3 }"#).unwrap();
    let out = sgswe(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("wibble"), "stderr: {err}");
}

#[test]
fn invalid_cfl_is_a_config_error() {
    let dir = tmp("bad-cfl");
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{ "preset": "demo1d_augmented_energy", "controls": { "cfl": 1.5 } }"#,
    )
    .unwrap();
    let out = sgswe(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("cfl"));
}

#[test]
fn solver_abort_maps_to_exit_3() {
    // dt_min above every admissible step size forces an immediate abort.
    let dir = tmp("abort");
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{ "preset": "demo1d_augmented_energy", "controls": { "dt_min": 1.0 } }"#,
    )
    .unwrap();
    let out = sgswe(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_writes_expected_artifacts() {
    let dir = tmp("artifacts");
    let out_dir = dir.join("out");
    let out = sgswe(&[
        "run",
        "--preset",
        "demo1d_augmented_energy",
        "--tend",
        "0.02",
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-coefficients",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let energy = String::from_utf8(read(&out_dir.join("energy.csv"))).unwrap();
    assert!(energy.starts_with("# sgswe v"));
    assert!(energy.contains("preset=demo1d_augmented_energy"));
    assert!(energy.contains("t,E,E_rel,E_aug,E_aug_rel"));
    let snapshot = String::from_utf8(read(&out_dir.join("snapshot_t0.0200.csv"))).unwrap();
    assert!(snapshot.contains("x,y,mean_w,std_w,mean_qx,mean_qy"));
    assert!(out_dir.join("coefficients_t0.0200.csv").exists());
    let manifest = String::from_utf8(read(&out_dir.join("manifest.json"))).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(parsed["preset"], "demo1d_augmented_energy");
    assert!(parsed["stats"]["steps"].as_u64().unwrap() > 0);
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tmp("determinism");
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out_dir in [&a, &b] {
        let out = sgswe(&[
            "run",
            "--preset",
            "sec5_4_plateau",
            "--mesh",
            "12,12",
            "--tend",
            "0.05",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["energy.csv", "snapshot_t0.0500.csv", "manifest.json"] {
        assert_eq!(
            read(&a.join(file)),
            read(&b.join(file)),
            "{file} differs between reruns"
        );
    }
}

#[test]
fn inline_initial_data_runs() {
    let dir = tmp("inline");
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{
  "scheme": "ES1",
  "mesh": { "mx": 8, "my": 6 },
  "domain": { "x": [0, 1], "y": [0, 1] },
  "basis": [ { "alpha": 0, "beta": 0, "order": 3 } ],
  "t_end": 0.02,
  "bc": { "left": "outflow", "right": "outflow", "bottom": "periodic", "top": "periodic" },
  "initial": {
    "w": "1 + 0.01*(xi1+1)*step(x-0.2)*step(0.4-x)",
    "u": "0.1",
    "bottom": "0.2*exp(-20*((x-0.5)^2 + (y-0.5)^2))"
  }
}"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let out = sgswe(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("energy.csv").exists());
}

#[test]
fn convergence_subcommand_writes_table() {
    let dir = tmp("convergence");
    let out_dir = dir.join("out");
    let out = sgswe(&[
        "convergence",
        "--preset",
        "sec5_1_accuracy",
        "--scheme",
        "EC",
        "--grids",
        "4,8",
        "--ref-grid",
        "16",
        "--tend",
        "0.01",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(read(&out_dir.join("convergence.csv"))).unwrap();
    assert!(table.contains("grid,error,order"));
    let data_lines: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("grid"))
        .collect();
    assert_eq!(data_lines.len(), 2);
    assert!(data_lines[0].starts_with("4,"));
    assert!(data_lines[1].starts_with("8,"));
}

#[test]
fn convergence_rejects_non_multiple_reference() {
    let out = sgswe(&[
        "convergence",
        "--preset",
        "sec5_1_accuracy",
        "--grids",
        "6",
        "--ref-grid",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn convergence_flags_degenerate_orders() {
    // The reference grid doubles as the finest test grid, so its error is
    // exactly zero and no meaningful order exists.
    let dir = tmp("degenerate");
    let out_dir = dir.join("out");
    let out = sgswe(&[
        "convergence",
        "--preset",
        "sec5_1_accuracy",
        "--scheme",
        "EC",
        "--grids",
        "4,8",
        "--ref-grid",
        "8",
        "--tend",
        "0.01",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(read(&out_dir.join("convergence.csv"))).unwrap();
    let degenerate_row = table
        .lines()
        .find(|l| l.starts_with("8,"))
        .expect("row for grid 8");
    assert!(
        degenerate_row.contains("degenerate"),
        "row was: {degenerate_row}"
    );
}
