//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 2 5`.

mod common;

use std::cell::OnceCell;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tss::baseline::{
    counting_estimator, lyapunov_rate, meanfield_closed, meanfield_pipeline, rk4, sams_mode, var_mbar_uniform,
    var_tss_uniform, z_rhs,
};
use tss::cli::{run_experiment, ExperimentConfig, ModelSpec, RunResult, StateSampler};
use tss::models::make_identical_pair;
use tss::rung_density::GammaMode;
use tss::sampler::replica_rng;
use tss::windows::WindowSpec;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn base(model: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        "seed = 0\ncycles = 1\ntrajectory_every = 0\n[model]\n{model}\n[windows]\nkind = \"full_double\"\n"
    ))
    .expect("base config")
}

fn ladder(l: usize) -> ModelSpec {
    ModelSpec::GaussianLadder { l, sampler: StateSampler::Exact }
}

fn final_only(cfg: &mut ExperimentConfig) {
    cfg.report_every = cfg.cycles.max(1);
    cfg.error_every = cfg.cycles.max(1);
}

fn run(cfg: &ExperimentConfig) -> RunResult {
    run_experiment(cfg, None).unwrap_or_else(|e| panic!("run failed (seed {}): {e}", cfg.seed))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `|F_L - F_0|` at the end of a run over `seeds`, truth 0.
fn end_errors(cfg: &ExperimentConfig, l: usize, seeds: std::ops::Range<u64>) -> Vec<f64> {
    seeds
        .map(|s| {
            let mut c = cfg.clone();
            c.seed = s;
            run(&c).difference(0, l).map_or(f64::INFINITY, f64::abs)
        })
        .collect()
}

// ------------------------------------------------------------------ 1

// The sample variance of n draws has relative sd sqrt(2/(n-1)); at 32 seeds
// that is 25%, wider than the 15% tolerance. 192 seeds (about 10%) is what
// fits the time budget.
const UNIFORM_SEEDS: u64 = 192;

fn criterion_1() -> Verdict {
    let mut cfg = base("name = \"uniform_pair\"\ndelta = 0.1");
    cfg.cycles = 1_000_000;
    cfg.eta = 0.0;
    cfg.alpha = 0.0;
    cfg.freeze_cycles = 100;
    cfg.gamma = GammaMode::Fixed(vec![0.5, 0.5]);
    final_only(&mut cfg);
    let mbar = var_mbar_uniform(0.1);
    let mut ok = true;
    let mut parts = Vec::new();
    for nu in [1u32, 2, 4] {
        cfg.nu = nu as usize;
        let d: Vec<f64> = (0..UNIFORM_SEEDS)
            .map(|s| {
                let mut c = cfg.clone();
                c.seed = s;
                run(&c).difference(0, 1).expect("both rungs defined")
            })
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let tv = cfg.cycles as f64 * var;
        let target = var_tss_uniform(0.1, nu).unwrap();
        let within = (tv / target - 1.0).abs() <= 0.15;
        let vs_mbar = if nu == 1 { tv >= mbar } else { tv < mbar };
        ok &= within && vs_mbar;
        parts.push(format!("nu={nu}: t*Var={tv:.3} (target {target:.3}, {:+.1}%, vs MBAR {mbar:.1} {})",
            100.0 * (tv / target - 1.0), if vs_mbar { "ok" } else { "WRONG SIDE" }));
    }
    verdict(ok, format!("{} seeds; {}", UNIFORM_SEEDS, parts.join("; ")))
}

// ------------------------------------------------------------------ 2 and 8

const COVERAGE_RUNS: u64 = 50;

fn ladder_visit_control(l: usize, cycles: u64) -> ExperimentConfig {
    let mut cfg = base("name = \"identical_pair\"");
    cfg.model = ladder(l);
    cfg.cycles = cycles;
    cfg.eta = 4.0;
    cfg.alpha = 0.19;
    cfg.n_epochs = 32;
    cfg.gamma = GammaMode::FlatHalvedEnds;
    cfg.freeze_cycles = 1;
    cfg
}

struct LadderRuns {
    /// Final `F_15 - F_0` per run.
    diffs: Vec<f64>,
    /// Final MSE of that difference per run.
    mse: Vec<Option<f64>>,
    /// `(t, MSE)` per report cycle, per run.
    series: Vec<Vec<(u64, f64)>>,
}

fn ladder_runs() -> LadderRuns {
    let mut cfg = ladder_visit_control(15, 100_000);
    cfg.report_every = 10_000;
    cfg.error_every = 10_000;
    let mut out = LadderRuns { diffs: vec![], mse: vec![], series: vec![] };
    for s in 0..COVERAGE_RUNS {
        cfg.seed = s;
        let r = run(&cfg);
        out.diffs.push(r.difference(0, 15).unwrap_or(f64::INFINITY));
        out.mse.push(r.final_mse[15]);
        out.series.push(
            r.estimates.iter().filter(|e| e.rung == 15).filter_map(|e| e.mse.map(|m| (e.cycle, m))).collect(),
        );
    }
    out
}

fn criterion_2(runs: &LadderRuns) -> Verdict {
    let abs: Vec<f64> = runs.diffs.iter().map(|d| d.abs()).collect();
    let m15 = median(&abs);
    let below = abs.iter().filter(|&&a| a < 0.2).count();
    let big = ladder_visit_control(63, 500_000);
    let mut big = big;
    final_only(&mut big);
    let e63 = end_errors(&big, 63, 0..3);
    let m63 = median(&e63);
    verdict(
        m15 < 0.2 && m63 < 0.3,
        format!(
            "L=15 median |dF|={m15:.3} (< 0.2 in {below}/{} runs, max {:.3}); L=63 |dF| = {:?}, median {m63:.3} (< 0.3)",
            abs.len(),
            abs.iter().cloned().fold(0.0, f64::max),
            e63.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8(runs: &LadderRuns) -> Verdict {
    // run-averaged MSE over one decade, log-log least squares
    let ts: Vec<u64> = runs.series[0].iter().map(|p| p.0).filter(|&t| t >= 10_000).collect();
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .map(|&t| {
            let v: Vec<f64> = runs.series.iter().filter_map(|s| s.iter().find(|p| p.0 == t).map(|p| p.1)).collect();
            ((t as f64).ln(), (v.iter().sum::<f64>() / v.len() as f64).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let covered = runs
        .diffs
        .iter()
        .zip(&runs.mse)
        .filter(|(d, m)| m.is_some_and(|m| d.abs() <= 2.0 * m.sqrt()))
        .count();
    let need = (0.8 * COVERAGE_RUNS as f64).ceil() as usize;
    verdict(
        (-1.3..=-0.7).contains(&slope) && covered >= need,
        format!("MSE slope {slope:.3} over t in [1e4, 1e5] (want [-1.3, -0.7]); coverage {covered}/{} (need {need})", runs.diffs.len()),
    )
}

// ------------------------------------------------------------------ 3

const SMALL_SEEDS: u64 = 8;

fn criterion_3() -> Verdict {
    let mut cfg = sams_mode(base("name = \"identical_pair\""));
    cfg.cycles = 100_000;
    cfg.gamma = GammaMode::FlatHalvedEnds;
    cfg.freeze_cycles = 1;
    final_only(&mut cfg);
    cfg.model = ladder(15);
    let e15 = end_errors(&cfg, 15, 0..SMALL_SEEDS);
    cfg.model = ladder(7);
    let e7 = end_errors(&cfg, 7, 0..SMALL_SEEDS);
    let (m15, m7) = (median(&e15), median(&e7));
    verdict(m15 > 1.0 && m7 < 0.2, format!("SAMS median |dF| over {SMALL_SEEDS} seeds: L=15 {m15:.3} (> 1.0), L=7 {m7:.3} (< 0.2)"))
}

// ------------------------------------------------------------------ 4

fn criterion_4() -> Verdict {
    let mut cfg = base("name = \"identical_pair\"");
    cfg.model = ladder(15);
    cfg.cycles = 100_000;
    cfg.eta = 0.0;
    cfg.alpha = 0.19;
    cfg.gamma = GammaMode::FlatHalvedEnds;
    cfg.freeze_cycles = 1;
    final_only(&mut cfg);
    cfg.windows = WindowSpec::Pattern { size: 8, overlap: 4 };
    let five = end_errors(&cfg, 15, 0..SMALL_SEEDS);
    cfg.windows = WindowSpec::Explicit { members: vec![(0..16).collect(), (0..8).collect(), (8..16).collect()] };
    let three = end_errors(&cfg, 15, 0..SMALL_SEEDS);
    let (m5, m3) = (median(&five), median(&three));
    verdict(m5 < 0.2 && m3 > m5, format!("median |dF| over {SMALL_SEEDS} seeds: 5 windows {m5:.3} (< 0.2), 3 windows {m3:.3} (larger)"))
}

// ------------------------------------------------------------------ 5

fn criterion_5() -> Verdict {
    let mut cfg = base("name = \"identical_pair\"");
    cfg.cycles = 10_000;
    cfg.report_every = 1;
    cfg.error_every = 1000;
    let r = run(&cfg);
    let mut steps = 0;
    let mut exact = true;
    for pair in r.estimates.chunks(2) {
        steps += 1;
        exact &= pair.len() == 2 && pair[0].cycle == pair[1].cycle && pair[0].f_tss.to_bits() == pair[1].f_tss.to_bits();
    }
    exact &= steps == cfg.cycles;

    let model = make_identical_pair();
    let hits = (0..32)
        .filter(|&s| {
            let mut rng = replica_rng(s, 0);
            counting_estimator(&model, 1_000_000, &mut rng).unwrap().abs() < 0.05
        })
        .count();
    verdict(
        exact && hits >= 30,
        format!("IIS dF bit-exactly 0 at all {steps} steps: {exact}; counting estimator |dF| < 0.05 in {hits}/32 seeds (need 30)"),
    )
}

// ------------------------------------------------------------------ 6

fn criterion_6() -> Verdict {
    let worst = (0..5).map(|s| common::batch_equivalence(s, 1000)).fold(0.0, f64::max);
    verdict(worst <= 1e-10, format!("largest relative gap to batch sums over 5 traces of 1000 cycles: {worst:.2e}"))
}

// ------------------------------------------------------------------ 7

fn criterion_7() -> Verdict {
    let mut worst = 0.0f64;
    for eta in [0.5, 1.0, 2.0, 4.0, 10.0] {
        for i in 0..=200 {
            let d = -10.0 + 0.1 * i as f64;
            let c = meanfield_closed(d, eta);
            let p = meanfield_pipeline(d, eta).unwrap();
            worst = worst.max((c - p).abs() / c.abs().max(1.0));
        }
    }

    // random K = 4 instances, trajectories for each η
    let etas = [0.0, 1.0, 2.0, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ordered = true;
    let mut decreasing = true;
    let mut points = 0;
    for _ in 0..3 {
        let g: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let gs: f64 = g.iter().sum();
        let gamma: Vec<f64> = g.iter().map(|v| v / gs).collect();
        let zstar: Vec<f64> = (0..4).map(|_| (rng.random_range(-3.0f64..3.0)).exp()).collect();
        let z0: Vec<f64> = (0..4).map(|_| (rng.random_range(-3.0f64..3.0)).exp()).collect();
        for &eta in &etas {
            let traj = rk4(|z| z_rhs(z, &zstar, &gamma, eta), &z0, 1e-3, 20_000);
            for z in traj.iter().step_by(100) {
                points += 1;
                let rates: Vec<f64> = etas.iter().map(|&e| lyapunov_rate(z, &zstar, &gamma, e)).collect();
                // Near equilibrium the gaps between η shrink like ε⁴ while
                // rounding in the rate grows like 1e-16·ε, with
                // ε = max |x_k/Σγx - 1|; compare only beyond that envelope.
                let x: Vec<f64> = zstar.iter().zip(z).map(|(a, b)| a / b).collect();
                let gx: f64 = gamma.iter().zip(&x).map(|(g, v)| g * v).sum();
                let eps = x.iter().map(|v| (v / gx - 1.0).abs()).fold(0.0, f64::max);
                let tol = 1e-13 * eps;
                decreasing &= rates.iter().all(|&r| r <= tol);
                ordered &= rates.windows(2).all(|w| w[1] <= w[0] + tol);
            }
        }
    }
    verdict(
        worst <= 1e-12 && ordered && decreasing,
        format!(
            "closed form vs pipeline worst relative gap {worst:.1e}; dV/dt <= 0 and nonincreasing in eta at {points} trajectory points: {}",
            ordered && decreasing
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ladder = OnceCell::new();
    let mut failed = false;
    for n in 1..=8u32 {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = match n {
            1 => criterion_1(),
            2 => criterion_2(ladder.get_or_init(ladder_runs)),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            _ => criterion_8(ladder.get_or_init(ladder_runs)),
        };
        failed |= !v.pass;
        println!(
            "criterion {n}: {} — {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
