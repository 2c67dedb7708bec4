//! Windows rescue the estimator on a 16-rung Gaussian ladder without visit
//! control: five windows of at most 8 rungs converge; three windows, one of
//! which spans the whole ladder, lag behind.

use tss::cli::{run_experiment, ExperimentConfig, ModelSpec, StateSampler};
use tss::windows::WindowSpec;

fn main() -> tss::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(
        "seed = 1\ncycles = 100000\neta = 0.0\nreport_every = 100000\nerror_every = 100000\ngamma = \"flat_halved_ends\"\n\
         [model]\nname = \"gaussian_ladder\"\nl = 15\n[windows]\nkind = \"full_double\"\n",
    )?;
    cfg.apply_env_seed()?;
    cfg.freeze_cycles = 1;
    cfg.model = ModelSpec::GaussianLadder { l: 15, sampler: StateSampler::Exact };
    let layouts = [
        ("3 windows", WindowSpec::Explicit { members: vec![(0..16).collect(), (0..8).collect(), (8..16).collect()] }),
        ("5 windows", WindowSpec::Pattern { size: 8, overlap: 4 }),
    ];
    for (name, spec) in layouts {
        cfg.windows = spec;
        let res = run_experiment(&cfg, None)?;
        println!("{name}: F_15 - F_0 = {:8.3}", res.difference(0, 15).unwrap_or(f64::NAN));
    }
    Ok(())
}
