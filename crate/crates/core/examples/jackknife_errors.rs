//! Jackknife error bars against the actual error on a Gaussian ladder, where
//! every F_k is 0.

use tss::cli::{run_experiment, ExperimentConfig};

fn main() -> tss::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(
        "seed = 5\ncycles = 50000\neta = 4.0\nfreeze_cycles = 1\nreport_every = 5000\nerror_every = 5000\n\
         trajectory_every = 0\ngamma = \"flat_halved_ends\"\n[model]\nname = \"gaussian_ladder\"\nl = 7\n[windows]\nkind = \"full_double\"\n",
    )?;
    cfg.apply_env_seed()?;
    let res = run_experiment(&cfg, None)?;
    println!("{:>8} {:>10} {:>10}", "cycle", "F_7 - F_0", "sqrt(MSE)");
    for row in res.estimates.iter().filter(|r| r.rung == 7) {
        let f0 = res.estimates.iter().find(|r| r.cycle == row.cycle && r.rung == 0).map_or(f64::NAN, |r| r.f_tss);
        println!("{:8} {:10.4} {:>10}", row.cycle, row.f_tss - f0, row.mse.map_or("-".into(), |m| format!("{:.4}", m.sqrt())));
    }
    Ok(())
}
