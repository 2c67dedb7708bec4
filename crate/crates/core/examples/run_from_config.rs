//! Run a TOML config and write the CSV outputs, as `tss run` does.
//!
//!     cargo run --example run_from_config -- tests/data/tiny.toml /tmp/tiny_out

use std::path::PathBuf;

use tss::cli::{run_experiment, validate, ExperimentConfig};

fn main() -> tss::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "tests/data/tiny.toml".into()));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tss_example"));
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.apply_env_seed()?;
    let report = validate(&cfg);
    if !report.is_ok() {
        for p in &report.problems {
            eprintln!("{p}");
        }
        std::process::exit(2);
    }
    let res = run_experiment(&cfg, Some(&out))?;
    println!("{} cycles -> {}", res.cycles, out.display());
    for (k, f) in res.final_fe.iter().enumerate() {
        println!("F_{k} = {}", f.map_or("undefined".into(), |v| format!("{v:.4}")));
    }
    Ok(())
}
