//! Asymptotic variance of the uniform-pair estimate: the closed form for
//! ν = 1, 2, 4 rung moves per draw next to MBAR, plus a small empirical
//! check of t·Var(F_1 - F_0) over a handful of seeds.

use tss::baseline::{var_mbar_uniform, var_tss_uniform};
use tss::cli::{run_experiment, ExperimentConfig};
use tss::rung_density::GammaMode;

fn main() -> tss::Result<()> {
    let delta = 0.1;
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let mut cfg = ExperimentConfig::from_toml(
        "seed = 0\ncycles = 200000\neta = 0.0\nalpha = 0.0\nfreeze_cycles = 100\ntrajectory_every = 0\n\
         report_every = 200000\nerror_every = 200000\n[model]\nname = \"uniform_pair\"\ndelta = 0.1\n[windows]\nkind = \"full_double\"\n",
    )?;
    cfg.gamma = GammaMode::Fixed(vec![0.5, 0.5]);
    println!("MBAR: {:.4}", var_mbar_uniform(delta));
    for nu in [1u32, 2, 4] {
        cfg.nu = nu as usize;
        let d: Vec<f64> = (0..seeds)
            .map(|s| {
                let mut c = cfg.clone();
                c.seed = s;
                run_experiment(&c, None).map(|r| r.difference(0, 1).unwrap_or(f64::NAN))
            })
            .collect::<tss::Result<_>>()?;
        // the exact difference is 0
        let tv = cfg.cycles as f64 * d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
        println!("nu = {nu}: closed form {:.4}, empirical {tv:.3} ({seeds} seeds)", var_tss_uniform(delta, nu)?);
    }
    Ok(())
}
