//! MBAR on exact samples from a Gaussian ladder, with the overlap-matrix
//! variance of the end-to-end difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tss::baseline::{difference_variance, mbar_solve, overlap_matrix, var_mbar, MbarOptions, OverlapMethod};
use tss::models::make_gaussian_ladder;

fn main() -> tss::Result<()> {
    let l = 4;
    let n = 5000;
    let model = make_gaussian_ladder(l)?;
    let fam = &model.family;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<Vec<Vec<f64>>> = (0..=l)
        .map(|k| {
            (0..n)
                .map(|_| {
                    let x = fam.sample_exact(k, &mut rng).expect("exact sampler");
                    (0..=l).map(|i| fam.energy(i, x)).collect()
                })
                .collect()
        })
        .collect();
    let res = mbar_solve(&samples, MbarOptions::default())?;
    let exact = model.exact_free_energies();
    for k in 0..=l {
        println!("F_{k}: MBAR {:8.4}  exact {:8.4}", res.f[k], exact[k] - exact[0]);
    }
    let pi = vec![1.0 / (l + 1) as f64; l + 1];
    let o = overlap_matrix(fam, exact, &pi, OverlapMethod::MonteCarlo(100_000), &mut rng)?;
    let var = difference_variance(&var_mbar(&o), 0, l);
    println!("asymptotic variance of F_{l} - F_0: {var:.3} (per total sample); sd here ~ {:.4}", (var / (n * (l + 1)) as f64).sqrt());
    Ok(())
}
