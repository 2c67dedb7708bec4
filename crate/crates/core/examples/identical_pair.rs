//! Two identical rungs: the importance-sampling estimator never moves off
//! F_1 - F_0 = 0, while a counting estimator driven by the same rung moves
//! only gets there statistically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tss::baseline::counting_estimator;
use tss::cli::{run_experiment, ExperimentConfig};
use tss::models::make_identical_pair;

fn main() -> tss::Result<()> {
    let cfg = ExperimentConfig::from_toml(
        "seed = 3\ncycles = 10000\nreport_every = 1000\n[model]\nname = \"identical_pair\"\n[windows]\nkind = \"full_double\"\n",
    )?;
    let res = run_experiment(&cfg, None)?;
    for c in (1000..=10000).step_by(3000) {
        let row = |k| res.estimates.iter().find(|r| r.cycle == c && r.rung == k).map(|r| r.f_tss);
        println!("cycle {c:6}: F_1 - F_0 = {:?}", row(1).zip(row(0)).map(|(a, b)| a - b));
    }
    let model = make_identical_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("counting estimator after 1e6 steps: {:+.4}", counting_estimator(&model, 1_000_000, &mut rng)?);
    Ok(())
}
