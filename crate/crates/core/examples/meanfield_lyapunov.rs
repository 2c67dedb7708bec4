//! Mean-field view of visit control: the two-rung drift from the closed form
//! and from the full pipeline, then the Lyapunov rate along a trajectory of
//! the K-rung flow for a few values of η.

use tss::baseline::{lyapunov_rate, meanfield_closed, meanfield_pipeline, rk4, z_rhs};

fn main() -> tss::Result<()> {
    println!("{:>6} {:>8} {:>12} {:>12}", "eta", "Delta", "closed", "pipeline");
    for eta in [0.5, 4.0] {
        for delta in [-4.0, -1.0, 0.5, 3.0] {
            println!("{eta:6} {delta:8} {:12.6} {:12.6}", meanfield_closed(delta, eta), meanfield_pipeline(delta, eta)?);
        }
    }
    let zstar = [1.0, 3.0, 0.2, 7.0];
    let gamma = [0.1, 0.4, 0.3, 0.2];
    let z0 = [5.0, 0.5, 1.0, 1.0];
    for eta in [0.0, 1.0, 10.0] {
        let path = rk4(|z| z_rhs(z, &zstar, &gamma, eta), &z0, 1e-2, 500);
        let rates: Vec<String> = path.iter().step_by(100).map(|z| format!("{:.2e}", lyapunov_rate(z, &zstar, &gamma, eta))).collect();
        println!("eta = {eta:4}: dV/dt = {}", rates.join(", "));
    }
    Ok(())
}
