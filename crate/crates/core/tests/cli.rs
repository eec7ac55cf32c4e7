use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use edgemac::edgemap::Raster;

fn edgemac(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgemac"))
        .args(args)
        .current_dir(cwd)
        .env_clear()
        .output()
        .unwrap()
}

#[test]
fn edges_writes_into_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..64).map(|i| if i % 8 < 4 { 0 } else { 200 }).collect();
    Raster::new(8, 8, pixels)
        .unwrap()
        .write(&dir.path().join("img.pgm"))
        .unwrap();
    let out = edgemac(
        &[
            "edges",
            "img.pgm",
            "--out",
            "maps",
            "--threads",
            "2",
            "--seed",
            "4",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "maps/img.pgm"
    );
    assert!(dir.path().join("maps/img.pgm").is_file());
}

#[test]
fn missing_input_fails_with_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgemac(&["index", "nothing.emdc", "--out", "o"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("nothing.emdc") && err.contains("not found"),
        "{err}"
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[train]\nmargin = -1.0\n").unwrap();
    let out = edgemac(&["--config", "run.toml", "report"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.margin"));

    fs::write(dir.path().join("run.toml"), "[diffusion]\nbeta = 2\n").unwrap();
    let out = edgemac(&["--config", "run.toml", "report"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`beta`"));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgemac(&["--threads", "0", "report"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("threads"));
}

#[test]
fn whiten_requires_pairs_or_transform() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgemac(&["whiten", "--descriptors", "d.emdc"], dir.path());
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}
