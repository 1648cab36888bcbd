use std::path::Path;
use std::process::Command;

use cellfree::harness::{read_csv, read_manifest};

fn cellfree(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(args)
        .output()
        .unwrap()
}

fn small_sweep(dir: &Path) -> std::process::Output {
    cellfree(&[
        "sweep-snr",
        "--output-dir",
        dir.to_str().unwrap(),
        "--seed",
        "3",
        "snr_db=[0.0, 10.0]",
        "n_channel_draws=4",
        "n_error_draws=3",
    ])
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(small_sweep(a.path()).status.success());
    assert!(small_sweep(b.path()).status.success());
    for file in ["sweep_snr.csv", "sweep_snr_MMSE-RB.dat"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn sweep_outputs_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_sweep(dir.path());
    assert!(out.status.success());
    let rows = read_csv(&dir.path().join("sweep_snr.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 4);
    let manifest = read_manifest(&dir.path().join("sweep_snr.manifest.json")).unwrap();
    assert_eq!(manifest.seed, 3);
    assert_eq!(manifest.table.rows(), rows);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("MMSE-RB-SP"));
}

#[test]
fn check_passes_and_reports_each_invariant() {
    let out = cellfree(&["check"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
    assert!(!stdout.contains("FAIL "));
}

#[test]
fn errors_map_to_exit_codes() {
    assert_eq!(cellfree(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(cellfree(&["run", "n_users=0"]).status.code(), Some(2));
    assert_eq!(
        cellfree(&["run", "snr_db=[0.0, 5.0]"]).status.code(),
        Some(2)
    );
    let file = tempfile::NamedTempFile::new().unwrap();
    let blocked = file.path().join("sub");
    let out = cellfree(&[
        "run",
        "--output-dir",
        blocked.to_str().unwrap(),
        "n_channel_draws=2",
        "n_error_draws=2",
    ]);
    assert_eq!(out.status.code(), Some(4));
}
