mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::igrid_bin;
use igrid::heat3d::read_field;

fn igrid(args: &[&str]) -> Output {
    Command::new(igrid_bin()).args(args).env_remove("IGRID_COORDINATOR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> Vec<u8> {
    let path = dir.join(name);
    let mut all = vec!["run"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", path.to_str().unwrap()]);
    let o = igrid(&all);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    std::fs::read(path).unwrap()
}

#[test]
fn dims_subcommand() {
    assert_eq!(stdout(&igrid(&["dims", "-n", "8"])), "2x2x2");
    assert_eq!(stdout(&igrid(&["dims", "-n", "1"])), "1x1x1");
    assert_eq!(stdout(&igrid(&["dims", "-n", "12", "--fix", "z=1"])), "4x3x1");
    assert_eq!(igrid(&["dims", "-n", "12", "--fix", "z=5"]).status.code(), Some(2));
}

#[test]
fn constant_run_writes_constant_field() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let o = igrid(&[
        "run", "--nx", "32", "--ny", "32", "--nz", "32", "--nt", "10", "--ranks", "1", "--init", "constant",
        "--out", dir.path().join("c.bin").to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let f = read_field(dir.path().join("c.bin")).unwrap();
    assert_eq!(f.dims(), [32; 3]);
    assert!(f.as_slice().iter().all(|&v| v == 1.7));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("it,step_secs,halo_secs,total_secs"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn eight_ranks_match_one_rank() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--nt", "15", "--init", "gaussian"];
    let one = run_to(dir.path(), "one.bin", &[&common[..], &["--nx", "30", "--ny", "30", "--nz", "30"]].concat());
    let eight = run_to(
        dir.path(),
        "eight.bin",
        &[&common[..], &["--nx", "16", "--ny", "16", "--nz", "16", "--ranks", "8", "--topology", "2x2x2"]].concat(),
    );
    assert_eq!(one, eight);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--nx", "12", "--nt", "10", "--ranks", "4", "--init", "random", "--seed", "3", "--hide-comm", "2,2,2"];
    let a = run_to(dir.path(), "a.bin", &args);
    let b = run_to(dir.path(), "b.bin", &args);
    assert_eq!(a, b);
    let other_seed = run_to(dir.path(), "c.bin", &[&args[..8], &["--seed", "4"]].concat());
    assert_ne!(a, other_seed);
}

#[test]
fn tcp_spawner_matches_inproc() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--nx", "10", "--ny", "9", "--nz", "8", "--nt", "12", "--ranks", "2", "--init", "gaussian"];
    let inproc = run_to(dir.path(), "i.bin", &args);
    let tcp = run_to(dir.path(), "t.bin", &[&args[..], &["--transport", "tcp"]].concat());
    assert_eq!(inproc, tcp);
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(igrid(&["run", "--transport", "mpi"]).status.code(), Some(2));
    assert_eq!(igrid(&["run", "--ranks", "3", "--topology", "2x2x1"]).status.code(), Some(2));
    assert_eq!(igrid(&["run", "--hide-comm", "2,2"]).status.code(), Some(2));
    assert_eq!(igrid(&["frobnicate"]).status.code(), Some(2));

    let o = igrid(&["run", "--ranks", "2", "--overlap", "3", "--nt", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid error on rank 0"), "{err}");

    let o = igrid(&["run", "--nx", "8", "--nt", "1", "--hide-comm", "1,2,2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap error on rank 0"));
}

#[test]
fn bench_csv_shape() {
    let o = igrid(&["bench", "--nx", "8", "--ny", "8", "--nz", "8", "--nt", "2", "--ranks", "2,1", "--samples", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "ranks,median_secs,ci_low,ci_high,efficiency");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[1].ends_with(",1.000000"));
    assert!(lines[2].starts_with("2,"));
}
