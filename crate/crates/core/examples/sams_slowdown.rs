//! Without visit control, forgetting or windows the estimator reduces to
//! SAMS. It copes with a short ladder but stalls on a longer one: the rung
//! process gets stuck and F_L - F_0 stays far from 0.

use tss::baseline::sams_mode;
use tss::cli::{run_experiment, ExperimentConfig, ModelSpec, StateSampler};
use tss::rung_density::GammaMode;

fn main() -> tss::Result<()> {
    let base = ExperimentConfig::from_toml(
        "seed = 1\ncycles = 100000\nreport_every = 100000\nerror_every = 100000\ngamma = \"flat_halved_ends\"\n\
         [model]\nname = \"identical_pair\"\n[windows]\nkind = \"full_double\"\n",
    )?;
    for l in [7, 15] {
        let mut cfg = sams_mode(base.clone());
        cfg.apply_env_seed()?;
        cfg.freeze_cycles = 1;
        cfg.model = ModelSpec::GaussianLadder { l, sampler: StateSampler::Exact };
        cfg.gamma = GammaMode::FlatHalvedEnds;
        let res = run_experiment(&cfg, None)?;
        let d = res.difference(0, l).unwrap_or(f64::NAN);
        let spread = res.visits.iter().filter(|&&v| v > 0).count();
        println!("L = {l:2}: F_L - F_0 = {d:8.3} after {} cycles; {spread} of {} rungs visited", cfg.cycles, l + 1);
    }
    Ok(())
}
