//! Epoch boundaries τ_l = ⌈φ τ_{l-1}⌉ and how many epochs stay live as the
//! run gets longer.

use tss::estimator::{EpochLedger, EpochSchedule};

fn main() -> tss::Result<()> {
    let alpha = 0.19;
    let phi = EpochSchedule::phi_for(alpha, 32);
    let mut sched = EpochSchedule::new(phi, alpha)?;
    let taus: Vec<u64> = (0..12).map(|l| sched.tau(l)).collect();
    println!("phi = {phi:.4}; first boundaries {taus:?}");

    let mut ledger = EpochLedger::new(EpochSchedule::new(phi, alpha)?, vec![4, 4], 0);
    let mut next = 10;
    for t in 1..=1_000_000u64 {
        ledger.roll_epochs(t);
        if t == next {
            let live: Vec<u32> = ledger.epochs().map(|e| e.index).collect();
            println!("t = {t:8}: {:2} live epochs, {} .. {}", live.len(), live[0], live[live.len() - 1]);
            next *= 10;
        }
    }
    Ok(())
}
