//! Black-box tests of the binary: exit codes and a minimal workflow.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swathfill"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("swathfill-cli-{}-{}", name, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY: &[&str] = &[
    "--grid_h", "8", "--grid_w", "16", "--sequences", "2", "--eval_windows", "1",
    "--epochs", "1", "--batch", "2", "--base_channels", "4", "--t_steps", "20",
    "--ddim_steps", "5", "--seed", "3",
];

#[test]
fn workflow_runs_and_exits_zero() {
    let dir = scratch("workflow");
    let data = dir.join("data");
    let run = dir.join("run");

    let st = bin().arg("gen-data").args(TINY).arg("--out").arg(&data).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .arg("train")
        .args(TINY)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .arg("sample")
        .args(TINY)
        .arg("--checkpoint")
        .arg(run.join("checkpoint"))
        .arg("--input")
        .arg(data.join("eval_0000.masked"))
        .arg("--mask")
        .arg(data.join("eval_0000.mask"))
        .arg("--aux")
        .arg(data.join("eval_0000.aux"))
        .arg("--out")
        .arg(dir.join("samples"))
        .arg("--k")
        .arg("1")
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .arg("baseline")
        .arg("--method")
        .arg("tli-lf")
        .arg("--input")
        .arg(data.join("eval_0000.masked"))
        .arg("--out")
        .arg(dir.join("tli"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let st = bin()
        .arg("evaluate")
        .args(TINY)
        .arg("--bootstrap_resamples")
        .arg("200")
        .arg("--pred")
        .arg(dir.join("samples").join("mean"))
        .arg("--pred")
        .arg(dir.join("tli"))
        .arg("--truth")
        .arg(data.join("eval_0000.truth"))
        .arg("--truth")
        .arg(data.join("eval_0000.truth"))
        .arg("--mask")
        .arg(data.join("eval_0000.mask"))
        .arg("--mask")
        .arg(data.join("eval_0000.mask"))
        .arg("--out")
        .arg(dir.join("report.txt"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(dir.join("report.txt").exists());

    let st = bin()
        .arg("render")
        .arg("--input")
        .arg(dir.join("samples").join("mean"))
        .arg("--out")
        .arg(dir.join("imgs"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_error_exits_2() {
    let dir = scratch("cfg2");
    // grid_h = 12 violates the divisible-by-8 requirement.
    let st = bin()
        .arg("gen-data")
        .arg("--grid_h")
        .arg("12")
        .arg("--out")
        .arg(dir.join("data"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn data_error_exits_3() {
    let dir = scratch("data3");
    let st = bin()
        .arg("train")
        .args(TINY)
        .arg("--data")
        .arg(dir.join("nonexistent"))
        .arg("--out")
        .arg(dir.join("run"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let st = bin().arg("gen-data").arg("--definitely-not-a-flag").arg("x").status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn numeric_failure_exits_4() {
    let dir = scratch("nan4");
    let data = dir.join("data");
    let st = bin().arg("gen-data").args(TINY).arg("--out").arg(&data).status().unwrap();
    assert_eq!(st.code(), Some(0));
    // An absurd learning rate blows the parameters up to non-finite loss
    // within a few steps; the run must abort with the numeric exit code.
    let st = bin()
        .arg("train")
        .args([
            "--grid_h", "8", "--grid_w", "16", "--sequences", "2", "--epochs", "5",
            "--batch", "2", "--base_channels", "4", "--t_steps", "20",
            "--ddim_steps", "5", "--seed", "3", "--lr", "1e25",
        ])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.join("run"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(4));
    let _ = std::fs::remove_dir_all(&dir);
}
