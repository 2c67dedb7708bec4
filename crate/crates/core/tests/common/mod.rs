//! Shared test oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tss::estimator::{EpochLedger, EpochSchedule};
use tss::models::RungGrid;
use tss::sampler::{EnergyRecord, SamplingWeights, WindowWeights};
use tss::windows::{build_layout, WindowLayout, WindowSpec};

struct Cycle {
    t: u64,
    records: Vec<EnergyRecord>,
    weights: SamplingWeights,
    gamma: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
}

fn random_trace_cycle(t: u64, layout: &WindowLayout, replicas: usize, m: usize, rng: &mut ChaCha8Rng) -> Cycle {
    let nw = layout.window_count();
    let mut weights = SamplingWeights::undefined(nw);
    let mut gamma = Vec::with_capacity(nw);
    for j in 0..nw {
        let n = layout.members(j).len();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = g.iter().sum();
        gamma.push(g.iter().map(|v| v / s).collect::<Vec<_>>());
        if rng.random_bool(0.85) {
            let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = pi.iter().sum();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            weights.set(j, Some(WindowWeights::new(pi.iter().map(|v| v / s).collect(), f)));
        }
    }
    let mut records = Vec::new();
    let mut psi = Vec::new();
    for r in 0..replicas {
        let j = rng.random_range(0..nw);
        let mem = layout.members(j);
        let k = mem[rng.random_range(0..mem.len())];
        let energies: Vec<f64> = mem
            .iter()
            .map(|&kk| if kk != k && rng.random_bool(0.05) { f64::INFINITY } else { rng.random_range(0.0..5.0) })
            .collect();
        psi.push((0..mem.len() * m).map(|_| rng.random_range(-2.0..2.0)).collect());
        records.push(EnergyRecord { replica: r, window: j, rung: k, x: 0.0, energies });
    }
    Cycle { t, records, weights, gamma, psi }
}

/// Importance ratio computed directly in the linear domain.
fn ratio(rec: &EnergyRecord, w: &SamplingWeights, s: usize) -> f64 {
    let num = (-rec.energies[s]).exp();
    let den = match w.get(rec.window) {
        None => 1.0,
        Some(ww) => (0..rec.energies.len()).map(|i| ww.pi()[i] * (ww.f()[i] - rec.energies[i]).exp()).sum(),
    };
    num / den
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Feed a random trace through the ledger and compare every live epoch's
/// counters, free energies, Ψ averages and tilts against sums recomputed
/// from the stored trace. Returns the largest relative error seen.
pub fn batch_equivalence(seed: u64, cycles: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = build_layout(&RungGrid::linear(8).unwrap(), &WindowSpec::Pattern { size: 4, overlap: 2 }).unwrap();
    let nw = layout.window_count();
    let m = 2;
    let replicas = 3;
    let slots: Vec<usize> = (0..nw).map(|j| layout.members(j).len()).collect();
    let mut ledger = EpochLedger::new(EpochSchedule::new(1.3, 0.19).unwrap(), slots, m);
    let mut sched = EpochSchedule::new(1.3, 0.19).unwrap();
    let slot = |j: usize, k: usize| layout.slot(j, k).unwrap();
    let mut trace: Vec<Cycle> = Vec::new();
    let mut worst = 0.0f64;
    for t in 1..=cycles {
        let c = random_trace_cycle(t, &layout, replicas, m, &mut rng);
        ledger.ingest(t, &c.records, &c.weights, &slot, &c.gamma, &c.psi);
        trace.push(c);
        if t % 37 != 0 && t != cycles {
            continue;
        }
        for e in ledger.epochs() {
            let (lo, hi) = (sched.tau(e.index - 1), sched.tau(e.index));
            let cyc: Vec<&Cycle> = trace.iter().filter(|c| c.t > lo && c.t <= hi).collect();
            for j in 0..nw {
                let st = &e.windows[j];
                let recs: Vec<(&Cycle, &EnergyRecord, usize)> = cyc
                    .iter()
                    .flat_map(|c| c.records.iter().enumerate().filter(|(_, r)| r.window == j).map(move |(i, r)| (*c, r, i)))
                    .collect();
                assert_eq!(st.n, recs.len() as u64, "counter of window {j}, epoch {}", e.index);
                if recs.is_empty() {
                    continue;
                }
                for s in 0..layout.members(j).len() {
                    let w: f64 = recs.iter().map(|(c, r, _)| ratio(r, &c.weights, s)).sum();
                    // e^{-ℱ} = W / N
                    let direct = w / recs.len() as f64;
                    let rec = (-st.epoch_fe(s)).exp();
                    worst = worst.max(rel(direct, rec));
                    if w > 0.0 {
                        for i in 0..m {
                            let num: f64 = recs.iter().map(|(c, r, ri)| ratio(r, &c.weights, s) * c.psi[*ri][s * m + i]).sum();
                            worst = worst.max(rel(num / w, st.psi[s * m + i]));
                        }
                    }
                    let k = layout.members(j)[s];
                    let tilt: f64 = recs.iter().filter(|(_, r, _)| r.rung == k).map(|(c, _, _)| 1.0 / c.gamma[j][s]).sum::<f64>()
                        / recs.len() as f64;
                    worst = worst.max(rel(tilt, st.tilt[s]));
                }
            }
        }
    }
    worst
}
