//! Delete-one-epoch jackknife over the live epochs of the ledger.

use crate::error::{Result, TssError};
use crate::estimator::{EpochLedger, WindowEstimate};
use crate::global::reported_fes;
use crate::windows::WindowLayout;

#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeReport {
    /// Live epoch indices, oldest first.
    pub epochs: Vec<u32>,
    /// Reported free energies with each epoch deleted, same order as `epochs`.
    pub replicates: Vec<Vec<Option<f64>>>,
    /// Fraction of the live time span covered by each epoch.
    pub a: Vec<f64>,
    /// Reported free energies from the full ledger.
    pub full: Vec<Option<f64>>,
}

/// `a_l = (min(τ_l, t) - τ_{l-1}) / (t - τ_{first-1})`.
pub fn epoch_weights(ledger: &mut EpochLedger, epochs: &[u32], t: u64) -> Vec<f64> {
    let Some(&first) = epochs.first() else { return vec![] };
    let sched = ledger.schedule_mut();
    let start = sched.tau(first - 1);
    let span = (t - start) as f64;
    epochs
        .iter()
        .map(|&l| (sched.tau(l).min(t) - sched.tau(l - 1)) as f64 / span)
        .collect()
}

fn split(est: &[WindowEstimate]) -> (Vec<Vec<f64>>, Vec<bool>) {
    (est.iter().map(|e| e.fe.clone()).collect(), est.iter().map(|e| e.is_defined()).collect())
}

/// Rerun the reported-free-energy pipeline once per deleted epoch, with the
/// rung densities held at `gamma`.
pub fn jackknife_replicates(ledger: &mut EpochLedger, layout: &WindowLayout, gamma: &[Vec<f64>]) -> Result<JackknifeReport> {
    let epochs: Vec<u32> = ledger.epochs().map(|e| e.index).collect();
    let (fe, visited) = split(&ledger.combine_epochs());
    let mut failing = Vec::new();
    let mut deleted = Vec::with_capacity(epochs.len());
    for &m in &epochs {
        let est = ledger.combine_without(m);
        for (j, e) in est.iter().enumerate() {
            if visited[j] && !e.is_defined() {
                failing.push((j, m));
            }
        }
        deleted.push(est);
    }
    if !failing.is_empty() {
        return Err(TssError::InsufficientCoverage { pairs: failing });
    }
    let full = reported_fes(&fe, gamma, &visited, layout)?.fe;
    let replicates = deleted
        .iter()
        .map(|est| {
            let (fe_m, vis_m) = split(est);
            reported_fes(&fe_m, gamma, &vis_m, layout).map(|r| r.fe)
        })
        .collect::<Result<Vec<_>>>()?;
    let t = ledger.cycle();
    let a = epoch_weights(ledger, &epochs, t);
    Ok(JackknifeReport { epochs, replicates, a, full })
}

/// Jackknife MSE of `F_{k'} - F_k`; `None` with fewer than two epochs or
/// when either rung is undefined.
pub fn mse_pair(report: &JackknifeReport, k: usize, k2: usize) -> Option<f64> {
    mse_from(&report.replicates, &report.full, &report.a, k, k2)
}

pub fn mse_from(replicates: &[Vec<Option<f64>>], full: &[Option<f64>], a: &[f64], k: usize, k2: usize) -> Option<f64> {
    let n = replicates.len();
    if n < 2 {
        return None;
    }
    let d_full = full[k2]? - full[k]?;
    let mut acc = 0.0;
    for (rep, &al) in replicates.iter().zip(a) {
        let d = rep[k2]? - rep[k]?;
        acc += (1.0 - al).powi(2) / al * (d - d_full).powi(2);
    }
    Some(acc / (n - 1) as f64)
}

/// MSE for each requested pair.
pub fn mse(report: &JackknifeReport, pairs: &[(usize, usize)]) -> Vec<Option<f64>> {
    pairs.iter().map(|&(k, k2)| mse_pair(report, k, k2)).collect()
}
