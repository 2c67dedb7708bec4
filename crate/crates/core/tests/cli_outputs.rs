use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tss::cli::{run_experiment, ExperimentConfig};

const FILES: [&str; 4] = ["estimates.csv", "trajectory.csv", "summary.csv", "manifest.json"];

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.toml")
}

fn tss() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tss"));
    c.env_remove("TSS_SEED");
    c
}

fn read(dir: &Path, f: &str) -> String {
    fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))
}

#[test]
fn same_config_same_bytes() {
    let cfg = ExperimentConfig::load(&tiny()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, Some(a.path())).unwrap();
    run_experiment(&cfg, Some(b.path())).unwrap();
    for f in FILES {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn manifest_reproduces_run() {
    let cfg = ExperimentConfig::load(&tiny()).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&cfg, Some(a.path())).unwrap();
    let again = ExperimentConfig::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!(again, cfg);
    run_experiment(&again, Some(b.path())).unwrap();
    for f in ["estimates.csv", "trajectory.csv", "summary.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn golden_estimates() {
    let cfg = ExperimentConfig::load(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(dir.path())).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny_estimates.csv");
    let got = read(dir.path(), "estimates.csv");
    if std::env::var_os("TSS_BLESS").is_some() {
        fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(golden).unwrap());
}

#[test]
fn csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&ExperimentConfig::load(&tiny()).unwrap(), Some(dir.path())).unwrap();
    let est = read(dir.path(), "estimates.csv");
    let mut lines = est.lines();
    assert_eq!(lines.next(), Some("cycle,rung,f_tss,mse"));
    // six reports of four rungs; the MSE column is filled every other report
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert!(rows.iter().filter(|r| r[0] == "100").all(|r| !r[3].is_empty()));
    assert!(rows.iter().filter(|r| r[0] == "50").all(|r| r[3].is_empty()));
    let f: f64 = rows[0][2].parse().unwrap();
    assert_eq!(format!("{f:.16e}"), rows[0][2], "floats round-trip");

    let traj = read(dir.path(), "trajectory.csv");
    assert_eq!(traj.lines().next(), Some("cycle,replica,k,j"));
    assert_eq!(traj.lines().count(), 1 + 12 * 2);
    let summary = read(dir.path(), "summary.csv");
    assert_eq!(summary.lines().next(), Some("rung,f_tss,diff,err2"));
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn zero_cycles_writes_headers() {
    let mut cfg = ExperimentConfig::load(&tiny()).unwrap();
    cfg.cycles = 0;
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(dir.path())).unwrap();
    assert_eq!(read(dir.path(), "estimates.csv"), "cycle,rung,f_tss,mse\n");
    assert_eq!(read(dir.path(), "trajectory.csv"), "cycle,replica,k,j\n");
    assert_eq!(read(dir.path(), "summary.csv"), "rung,f_tss,diff,err2\n");
}

#[test]
fn binary_run_and_seed_override() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ok = tss().args(["run"]).arg(tiny()).arg("--out").arg(a.path()).status().unwrap();
    assert!(ok.success());
    let ok = tss().env("TSS_SEED", "11").args(["run"]).arg(tiny()).arg("--out").arg(b.path()).status().unwrap();
    assert!(ok.success());
    let ok = tss().env("TSS_SEED", "12").args(["run"]).arg(tiny()).arg("--out").arg(c.path()).status().unwrap();
    assert!(ok.success());
    assert_eq!(read(a.path(), "estimates.csv"), read(b.path(), "estimates.csv"));
    assert_ne!(read(a.path(), "estimates.csv"), read(c.path(), "estimates.csv"));
    assert!(read(c.path(), "manifest.json").contains("\"seed\": 12"));
}

#[test]
fn binary_validate() {
    let out = tss().arg("validate").arg(tiny()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("phi = 1.0533"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let cfg = fs::read_to_string(tiny()).unwrap().replace("eta = 2.0", "eta = -1.0").replace("kind = \"full_double\"", "kind = \"pattern\"\nsize = 2\noverlap = 3");
    fs::write(&bad, cfg).unwrap();
    let out = tss().arg("validate").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let text = String::from_utf8(out.stdout).unwrap() + &String::from_utf8(out.stderr).unwrap();
    assert!(text.contains("eta"), "{text}");
    assert!(text.contains("overlap"), "{text}");
}

#[test]
fn binary_oracles() {
    let run = |args: &[&str]| {
        let out = tss().arg("oracle").args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}");
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    };
    assert_eq!(run(&["var-tss", "--delta", "0.1", "--nu", "2"]), "14.5778");
    assert_eq!(run(&["var-mbar", "--delta", "0.1"]).parse::<f64>().unwrap(), 16.0);
    let mf = run(&["meanfield", "--eta", "2", "--delta", "0"]);
    let last = mf.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&cols[1..], &[0.0, 0.0]);
    let bad = tss().args(["oracle", "var-tss", "--delta", "0.7"]).output().unwrap();
    assert!(!bad.status.success());
}
