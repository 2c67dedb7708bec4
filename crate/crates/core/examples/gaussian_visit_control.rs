//! Visit control on the Gaussian ladder: one window pair spanning all
//! rungs, η = 4, history forgetting with 32 epochs. The end-to-end
//! difference F_L - F_0 should approach its exact value 0.

use std::time::Instant;

use tss::cli::{run_experiment, ExperimentConfig, ModelSpec, StateSampler};
use tss::rung_density::GammaMode;
use tss::windows::WindowSpec;

fn main() -> tss::Result<()> {
    let l: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let cycles: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let mut cfg = ExperimentConfig::from_toml("seed = 1\ncycles = 1\n[model]\nname = \"identical_pair\"\n[windows]\nkind = \"full_double\"\n")?;
    cfg.apply_env_seed()?;
    cfg.freeze_cycles = 1;
    cfg.cycles = cycles;
    cfg.eta = 4.0;
    cfg.gamma = GammaMode::FlatHalvedEnds;
    cfg.model = ModelSpec::GaussianLadder { l, sampler: StateSampler::Exact };
    cfg.windows = WindowSpec::FullDouble;
    cfg.report_every = cycles / 10;
    cfg.error_every = cycles / 10;

    let start = Instant::now();
    let res = run_experiment(&cfg, None)?;
    println!("L = {l}, {cycles} cycles in {:.1?}", start.elapsed());
    println!("{:>10} {:>12} {:>12}", "cycle", "F_L - F_0", "2 sqrt(MSE)");
    for row in res.estimates.iter().filter(|r| r.rung == l) {
        let f0 = res.estimates.iter().find(|r| r.cycle == row.cycle && r.rung == 0).map(|r| r.f_tss);
        let err = row.mse.map(|m| format!("{:12.4}", 2.0 * m.sqrt())).unwrap_or_default();
        println!("{:>10} {:>12.4} {err}", row.cycle, row.f_tss - f0.unwrap_or(f64::NAN));
    }
    Ok(())
}
