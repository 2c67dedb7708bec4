//! The multireplica run loop and its file outputs.
//!
//! Files written to the output directory:
//! - `estimates.csv`: `cycle,rung,f_tss,mse` — reported free energy of every
//!   defined rung and the jackknife MSE of `F_rung - F_anchor` (empty when
//!   not evaluated at that cycle).
//! - `trajectory.csv`: `cycle,replica,k,j`.
//! - `summary.csv`: `rung,f_tss,diff,err2` at the last cycle, with
//!   `diff = F_rung - F_anchor` and `err2 = 2 sqrt(MSE)`.
//! - `manifest.json`: config echo, version and seed.
//! - `checkpoint.csv` (only when a global solve fails): the live epoch ledger.
//!
//! Floats are written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cli::config::{validate, ExperimentConfig, Manifest};
use crate::error::{Result, TssError};
use crate::estimator::{EpochLedger, WindowEstimate};
use crate::global::{reported_fes, visit_control_into, OffsetOptions};
use crate::jackknife::{jackknife_replicates, mse_pair};
use crate::models::ModelFamily;
use crate::rung_density::{
    fixed_global_gamma, gamma_from_global, gamma_regularized, metric_estimate, observable_count, psi_observables,
    MetricEstimate,
};
use crate::sampler::{initial_state, replica_rng, run_cycle_into, EnergyRecord, ReplicaState, SamplingWeights};
use crate::windows::{build_layout, WindowLayout};

pub const ESTIMATES_HEADER: &str = "cycle,rung,f_tss,mse";
pub const TRAJECTORY_HEADER: &str = "cycle,replica,k,j";
pub const SUMMARY_HEADER: &str = "rung,f_tss,diff,err2";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per defined rung at a report cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub cycle: u64,
    pub rung: usize,
    pub f_tss: f64,
    pub mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub cycles: u64,
    pub estimates: Vec<EstimateRow>,
    /// Reported free energies at the last cycle.
    pub final_fe: Vec<Option<f64>>,
    /// MSE of `F_k - F_anchor` at the last cycle.
    pub final_mse: Vec<Option<f64>>,
    /// Visits per rung over the whole run, all replicas.
    pub visits: Vec<u64>,
}

impl RunResult {
    /// `F_b - F_a` at the last cycle.
    pub fn difference(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.final_fe[b]? - self.final_fe[a]?)
    }
}

struct Outputs {
    estimates: BufWriter<File>,
    trajectory: BufWriter<File>,
}

impl Outputs {
    fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&Manifest::new(cfg)).map_err(|e| TssError::Io(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        let mut estimates = BufWriter::new(File::create(dir.join("estimates.csv"))?);
        writeln!(estimates, "{ESTIMATES_HEADER}")?;
        let mut trajectory = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
        writeln!(trajectory, "{TRAJECTORY_HEADER}")?;
        Ok(Outputs { estimates, trajectory })
    }

    fn flush(&mut self) -> Result<()> {
        self.estimates.flush()?;
        self.trajectory.flush()?;
        Ok(())
    }
}

fn write_summary(dir: &Path, fe: &[Option<f64>], mse: &[Option<f64>], anchor: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("summary.csv"))?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for (k, f) in fe.iter().enumerate() {
        let Some(f) = f else { continue };
        let diff = fe[anchor].map(|a| fmt_f64(f - a)).unwrap_or_default();
        let err = mse[k].map(|m| fmt_f64(2.0 * m.sqrt())).unwrap_or_default();
        writeln!(w, "{k},{},{diff},{err}", fmt_f64(*f))?;
    }
    w.flush()?;
    Ok(())
}

fn write_checkpoint(dir: &Path, ledger: &EpochLedger) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("checkpoint.csv"))?);
    writeln!(w, "window,epoch,slot,n,epoch_fe,tilt,psi")?;
    for (j, l, s, n, fe, psi, tilt) in ledger.snapshot_rows() {
        let psi: Vec<String> = psi.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{j},{l},{s},{n},{},{},{}", fmt_f64(fe), fmt_f64(tilt), psi.join(";"))?;
    }
    w.flush()?;
    Ok(())
}

/// Copy the per-window free energies, tilts and defined flags into reused buffers.
fn split_into(est: &[WindowEstimate], fe: &mut Vec<Vec<f64>>, tilts: &mut Vec<Vec<f64>>, visited: &mut Vec<bool>) {
    fe.resize_with(est.len(), Vec::new);
    tilts.resize_with(est.len(), Vec::new);
    visited.clear();
    for (j, e) in est.iter().enumerate() {
        fe[j].clone_from(&e.fe);
        tilts[j].clone_from(&e.tilt);
        visited.push(e.is_defined());
    }
}

/// Rung densities for the next cycle; `None` when they are fixed.
fn next_gamma(
    fixed: &Option<Vec<Vec<f64>>>,
    est: &[WindowEstimate],
    family: &ModelFamily,
    layout: &WindowLayout,
    eps: f64,
) -> Result<Option<Vec<Vec<f64>>>> {
    match fixed {
        Some(_) => Ok(None),
        None => gamma_regularized(&metric_estimate(est, family.grid().dim()), layout, family.grid(), eps).map(Some),
    }
}

/// Run an experiment; files are written when `out` is given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunResult> {
    let report = validate(cfg);
    if !report.is_ok() {
        return Err(TssError::Config(report.problems.join("; ")));
    }
    let model = cfg.model.build()?;
    let family = &model.family;
    let layout = build_layout(family.grid(), &cfg.windows)?;
    let nk = family.rung_count();
    let nw = layout.window_count();
    let params = cfg.cycle_params();

    let fixed = fixed_global_gamma(&cfg.gamma, family)?.map(|g| gamma_from_global(&g, &layout));
    let m = if fixed.is_some() { 0 } else { observable_count(family.grid().dim()) };
    let empty_metric = MetricEstimate { sqrt_det: (0..nw).map(|j| vec![None; layout.members(j).len()]).collect() };
    let mut gamma = match &fixed {
        Some(g) => g.clone(),
        None => gamma_regularized(&empty_metric, &layout, family.grid(), cfg.eps_gamma)?,
    };

    let slots: Vec<usize> = (0..nw).map(|j| layout.members(j).len()).collect();
    let mut ledger = EpochLedger::new(cfg.schedule()?, slots, m);
    let mut rngs: Vec<_> = (0..cfg.replicas).map(|r| replica_rng(cfg.seed, r)).collect();
    let mut states: Vec<ReplicaState> =
        rngs.iter_mut().map(|rng| initial_state(family, &layout, cfg.initial_rung, rng)).collect();

    let mut outputs = match out {
        Some(dir) => Some(Outputs::create(dir, cfg)?),
        None => None,
    };

    let frozen = SamplingWeights::frozen(&layout, &gamma, &vec![0.0; nk]);
    let mut weights = SamplingWeights::undefined(nw);
    let mut f_prev: Option<Vec<f64>> = None;
    let mut visits = vec![0u64; nk];
    let mut estimates = Vec::new();
    let mut final_fe = vec![None; nk];
    let mut final_mse = vec![None; nk];
    let slot = |j: usize, k: usize| layout.slot(j, k).expect("record rung lies in its window");
    let no_psi: Vec<Vec<f64>> = vec![Vec::new(); cfg.replicas];
    let mut records: Vec<EnergyRecord> = Vec::new();
    let (mut fe, mut tilts, mut visited) = (Vec::new(), Vec::new(), Vec::new());

    for t in 1..=cfg.cycles {
        let w = if t <= cfg.freeze_cycles { &frozen } else { &weights };
        run_cycle_into(&mut states, &mut rngs, w, &layout, family, &params, cfg.parallel, &mut records)?;
        let psi: Vec<Vec<f64>> = if m > 0 {
            records.iter().map(|r| psi_observables(family, &layout, r.window, r.x)).collect()
        } else {
            Vec::new()
        };
        ledger.ingest(t, &records, w, &slot, &gamma, if m > 0 { &psi } else { &no_psi });
        for r in &records {
            visits[r.rung] += 1;
        }
        if let Some(o) = outputs.as_mut() {
            if cfg.trajectory_every > 0 && t % cfg.trajectory_every == 0 {
                for r in &records {
                    writeln!(o.trajectory, "{t},{},{},{}", r.replica, r.rung, r.window)?;
                }
            }
        }

        let est = ledger.combined();
        if let Some(g) = next_gamma(&fixed, est, family, &layout, cfg.eps_gamma)? {
            gamma = g;
        }
        split_into(est, &mut fe, &mut tilts, &mut visited);
        let stale = (0..nw).any(|j| visited[j] && !weights.is_defined(j));
        if stale || t % cfg.global_every == 0 {
            let opts = OffsetOptions::default();
            match visit_control_into(&mut weights, &fe, &gamma, &tilts, &visited, cfg.eta, cfg.eps_pi, &layout, opts, f_prev.as_deref()) {
                Ok((_, _, f, _)) => {
                    if cfg.eta > 0.0 {
                        f_prev = Some(f);
                    }
                }
                Err(e) => {
                    if let (Some(o), Some(dir)) = (outputs.as_mut(), out) {
                        o.flush()?;
                        write_checkpoint(dir, &ledger)?;
                    }
                    return Err(e);
                }
            }
        }

        let last = t == cfg.cycles;
        if t % cfg.report_every == 0 || last {
            let rep = reported_fes(&fe, &gamma, &visited, &layout)?;
            let mse: Vec<Option<f64>> = if t % cfg.error_every == 0 || last {
                match jackknife_replicates(&mut ledger, &layout, &gamma) {
                    Ok(jk) => (0..nk).map(|k| mse_pair(&jk, cfg.anchor_rung, k)).collect(),
                    Err(TssError::InsufficientCoverage { .. }) => vec![None; nk],
                    Err(e) => return Err(e),
                }
            } else {
                vec![None; nk]
            };
            for k in 0..nk {
                if let Some(f) = rep.fe[k] {
                    let row = EstimateRow { cycle: t, rung: k, f_tss: f, mse: mse[k] };
                    if let Some(o) = outputs.as_mut() {
                        let ms = row.mse.map(fmt_f64).unwrap_or_default();
                        writeln!(o.estimates, "{t},{k},{},{ms}", fmt_f64(f))?;
                    }
                    estimates.push(row);
                }
            }
            final_fe = rep.fe;
            final_mse = mse;
        }
    }

    if let (Some(mut o), Some(dir)) = (outputs, out) {
        o.flush()?;
        write_summary(dir, &final_fe, &final_mse, cfg.anchor_rung)?;
    }
    Ok(RunResult { cycles: cfg.cycles, estimates, final_fe, final_mse, visits })
}
