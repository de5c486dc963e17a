use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stheat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stheat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_NOISE: &str = "[noise_dump]\nks_samples = 500\nsubsteps = 16\n";

#[test]
fn noise_dump_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_NOISE);
    let out = dir.path().join("out");
    let o = stheat(&[
        "noise-dump",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let j = read_json(&out.join("noise_dump.json"));
    assert_eq!(j["schema_version"], 1);
    assert_eq!(j["seed"], 9);
    assert_eq!(j["config"]["seed"], 9);
    assert_eq!(j["config_hash"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(out.join("noise.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path,j,n,dW,iW"));
    // 2 paths x 4 modes x 16 intervals by default.
    assert_eq!(lines.count(), 2 * 4 * 16);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn paths_flag_and_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_NOISE);
    let out = dir.path().join("o");
    let o = stheat(&[
        "noise-dump",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "3",
        "--quiet",
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let csv = std::fs::read_to_string(out.join("noise.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4 * 16);
}

#[test]
fn unknown_config_key_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[infsup]\nkapas = [1.0]\n");
    let o = stheat(&[
        "infsup",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapas"));
}

#[test]
fn infsup_sweep_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[infsup]\nlevels = [[4, 8]]\nrecorded_t_ends = []\n",
    );
    let out = dir.path().join("o");
    let o = stheat(&["infsup", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(out.join("infsup_sweep.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("A_min,A_max,beta,N,J,c_B,C_B,bound_lower,bound_upper")
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

#[test]
fn failed_invariant_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // An impossible ratio window forces the asserted check to fail.
    let cfg = write_config(
        dir.path(),
        "[mild_equiv]\nmodes = 4\nsteps = [8, 16]\npaths = 10\nratio_window = [100.0, 200.0]\n",
    );
    let out = dir.path().join("o");
    let o = stheat(&[
        "mild-equiv",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    // The report is still written.
    let j = read_json(&out.join("mild_equiv.json"));
    assert_eq!(j["experiment"], "mild_equiv");
}

#[test]
fn random_coefficient_rejected_for_mild_equivalence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[mild_equiv.operator]\na_min = 0.5\na_max = 2.0\nlaw = \"uniform\"\n",
    );
    let o = stheat(&[
        "mild-equiv",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[regularity]\nmodes = [4, 8]\nsteps = 16\npaths = 20\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = stheat(&[
            "regularity",
            "--config",
            &cfg,
            "--out",
            d.to_str().unwrap(),
            "--quiet",
        ]);
        assert!(o.status.code().is_some());
    }
    let ca = std::fs::read_to_string(a.join("regularity.csv")).unwrap();
    let cb = std::fs::read_to_string(b.join("regularity.csv")).unwrap();
    assert_eq!(ca, cb);
}
