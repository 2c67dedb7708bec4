//! Epoch schedule and per-window, per-epoch estimates: visit counters, free
//! energies, observable (Ψ) averages and tilts, with history forgetting.
//!
//! Each epoch stores, per window and rung, the log of the summed importance
//! ratios `log W = log(N e^{-ℱ})` rather than `ℱ` itself. The update
//! `W <- W + sum_r R_r` is the free-energy recursion written in the log
//! domain; it stays finite when a rung has only seen zero ratios, where the
//! `ℱ` form would need `e^{+inf} * 0`.

use std::collections::VecDeque;

use crate::error::{Result, TssError};
use crate::numeric::{log_add_exp, neg_energy};
use crate::sampler::{EnergyRecord, SamplingWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSchedule {
    phi: f64,
    alpha: f64,
    tau: Vec<u64>,
}

impl EpochSchedule {
    pub fn new(phi: f64, alpha: f64) -> Result<Self> {
        if !(phi > 1.0) || !phi.is_finite() {
            return Err(TssError::Domain(format!("phi must be a finite real > 1, got {phi}")));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(TssError::Domain(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        Ok(EpochSchedule { phi, alpha, tau: vec![0, 1] })
    }

    /// `phi = alpha^(-1/n_epochs)`, so that about `n_epochs` epochs stay live.
    pub fn phi_for(alpha: f64, n_epochs: u32) -> f64 {
        alpha.powf(-1.0 / n_epochs as f64)
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Append `τ_{l+1} = ⌈φ τ_l⌉`; saturates at `u64::MAX`.
    fn push_next(&mut self) {
        let last = *self.tau.last().unwrap();
        let next = ((self.phi * last as f64).ceil() as u64).max(last.saturating_add(1));
        self.tau.push(next);
    }

    fn extend_to(&mut self, s: f64) {
        while (*self.tau.last().unwrap() as f64) < s {
            self.push_next();
        }
    }

    pub fn tau(&mut self, l: u32) -> u64 {
        while self.tau.len() <= l as usize {
            self.push_next();
        }
        self.tau[l as usize]
    }

    /// `n(s)`: the smallest `l >= 1` with `s <= tau_l`.
    pub fn epoch_index(&mut self, s: f64) -> u32 {
        assert!(s >= 0.0, "epoch_index needs s >= 0");
        self.extend_to(s);
        let idx = self.tau[1..].partition_point(|&t| (t as f64) < s);
        (idx + 1) as u32
    }
}

/// One window's accumulators within one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub n: u64,
    /// `log sum R` per rung slot; `-inf` when nothing positive has arrived.
    pub log_w: Vec<f64>,
    /// Ratio-weighted observable averages, `slots * m` entries.
    pub psi: Vec<f64>,
    /// Tilts `(1/N) sum 1{k}/gamma`.
    pub tilt: Vec<f64>,
}

impl EpochStats {
    fn empty(slots: usize, m: usize) -> Self {
        EpochStats { n: 0, log_w: vec![f64::NEG_INFINITY; slots], psi: vec![0.0; slots * m], tilt: vec![0.0; slots] }
    }

    /// Epoch free energy `ℱ` of a slot, with the `ℱ = 0` convention for `N = 0`.
    pub fn epoch_fe(&self, slot: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.n as f64).ln() - self.log_w[slot]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub index: u32,
    pub windows: Vec<EpochStats>,
}

/// All-epoch estimates for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    pub n: u64,
    /// `F_{j;k}`; `+inf` for a rung whose ratios have all been zero.
    pub fe: Vec<f64>,
    /// `slots * m` averages; `None` where the weight vanishes.
    pub psi: Vec<Option<f64>>,
    pub tilt: Vec<f64>,
}

impl WindowEstimate {
    pub fn is_defined(&self) -> bool {
        self.n > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Aggregate {
    n: u64,
    log_w: Vec<f64>,
    psi: Vec<f64>,
    tilt_sum: Vec<f64>,
}

impl Aggregate {
    fn empty(slots: usize, m: usize) -> Self {
        Aggregate { n: 0, log_w: vec![f64::NEG_INFINITY; slots], psi: vec![0.0; slots * m], tilt_sum: vec![0.0; slots] }
    }

    fn add(&mut self, e: &EpochStats, m: usize) {
        if e.n == 0 {
            return;
        }
        self.n += e.n;
        for s in 0..self.log_w.len() {
            let lw = log_add_exp(self.log_w[s], e.log_w[s]);
            if lw > f64::NEG_INFINITY {
                let a = (self.log_w[s] - lw).exp();
                let b = (e.log_w[s] - lw).exp();
                for i in 0..m {
                    let p = &mut self.psi[s * m + i];
                    *p = a * *p + b * e.psi[s * m + i];
                }
            }
            self.log_w[s] = lw;
            self.tilt_sum[s] += e.n as f64 * e.tilt[s];
        }
    }

    /// `self` plus `e`, written straight into `out`; the same arithmetic as
    /// a clone, [`Self::add`] and [`Self::estimate`], without the allocations.
    fn estimate_with_into(&self, e: Option<&EpochStats>, m: usize, out: &mut WindowEstimate) {
        let e = e.filter(|e| e.n > 0);
        let n = self.n + e.map_or(0, |e| e.n);
        let nf = n as f64;
        let slots = self.log_w.len();
        let ln_n = nf.ln();
        out.n = n;
        out.fe.resize(slots, 0.0);
        out.tilt.resize(slots, 0.0);
        out.psi.resize(slots * m, None);
        for s in 0..slots {
            let (lw, ts) = match e {
                Some(e) => (log_add_exp(self.log_w[s], e.log_w[s]), self.tilt_sum[s] + e.n as f64 * e.tilt[s]),
                None => (self.log_w[s], self.tilt_sum[s]),
            };
            out.fe[s] = if n == 0 { 0.0 } else { ln_n - lw };
            out.tilt[s] = if n == 0 { 0.0 } else { ts / nf };
            for i in 0..m {
                let mut p = self.psi[s * m + i];
                if let Some(e) = e {
                    if lw > f64::NEG_INFINITY {
                        let a = (self.log_w[s] - lw).exp();
                        let b = (e.log_w[s] - lw).exp();
                        p = a * p + b * e.psi[s * m + i];
                    }
                }
                out.psi[s * m + i] = (n > 0 && lw > f64::NEG_INFINITY).then_some(p);
            }
        }
    }

    fn estimate(&self, m: usize) -> WindowEstimate {
        let n = self.n;
        let nf = n as f64;
        let fe = self
            .log_w
            .iter()
            .map(|&lw| if n == 0 { 0.0 } else { nf.ln() - lw })
            .collect();
        let psi = (0..self.psi.len())
            .map(|i| if n > 0 && self.log_w[i / m.max(1)] > f64::NEG_INFINITY { Some(self.psi[i]) } else { None })
            .collect();
        let tilt = self.tilt_sum.iter().map(|&s| if n == 0 { 0.0 } else { s / nf }).collect();
        WindowEstimate { n, fe, psi, tilt }
    }
}

/// Per-window epoch accumulators over the live history.
#[derive(Debug, Clone)]
pub struct EpochLedger {
    schedule: EpochSchedule,
    slots: Vec<usize>,
    m: usize,
    epochs: VecDeque<Epoch>,
    t: u64,
    /// Aggregate over every live epoch except the newest, per window.
    closed: Option<Vec<Aggregate>>,
    combined: Vec<WindowEstimate>,
    log_r: Vec<Vec<f64>>,
    tilt_visits: Vec<Vec<f64>>,
    tilt_counts: Vec<u64>,
}

/// `log R_{j;k}` for every rung of the record's window.
pub fn log_importance_ratios(record: &EnergyRecord, weights: &SamplingWeights) -> Vec<f64> {
    let mut out = Vec::with_capacity(record.energies.len());
    log_importance_ratios_into(record, weights, &mut out);
    out
}

fn log_importance_ratios_into(record: &EnergyRecord, weights: &SamplingWeights, out: &mut Vec<f64>) {
    let log_d = match weights.get(record.window) {
        Some(w) => w.log_denominator(&record.energies),
        None => 0.0,
    };
    out.clear();
    out.extend(record.energies.iter().map(|&h| {
        let a = neg_energy(h);
        if a == f64::NEG_INFINITY || log_d == f64::INFINITY {
            f64::NEG_INFINITY
        } else {
            a - log_d
        }
    }));
}

pub fn importance_ratios(record: &EnergyRecord, weights: &SamplingWeights) -> Vec<f64> {
    log_importance_ratios(record, weights).into_iter().map(f64::exp).collect()
}

impl EpochLedger {
    /// `slots[j]` is `|W_j|`; `m` is the number of observables per rung.
    pub fn new(schedule: EpochSchedule, slots: Vec<usize>, m: usize) -> Self {
        let combined = slots.iter().map(|_| WindowEstimate { n: 0, fe: vec![], psi: vec![], tilt: vec![] }).collect();
        let tilt_visits = slots.iter().map(|&s| vec![0.0; s]).collect();
        let tilt_counts = vec![0; slots.len()];
        EpochLedger {
            schedule,
            slots,
            m,
            epochs: VecDeque::new(),
            t: 0,
            closed: None,
            combined,
            log_r: Vec::new(),
            tilt_visits,
            tilt_counts,
        }
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    pub fn schedule_mut(&mut self) -> &mut EpochSchedule {
        &mut self.schedule
    }

    pub fn observables(&self) -> usize {
        self.m
    }

    pub fn window_count(&self) -> usize {
        self.slots.len()
    }

    pub fn cycle(&self) -> u64 {
        self.t
    }

    pub fn epochs(&self) -> impl Iterator<Item = &Epoch> {
        self.epochs.iter()
    }

    pub fn live_epoch_count(&self) -> usize {
        self.epochs.len()
    }

    /// Open epoch `n(t)` when `t` starts it and drop epochs older than `n(alpha t)`.
    pub fn roll_epochs(&mut self, t: u64) {
        assert!(t >= 1, "cycles are numbered from 1");
        self.t = t;
        // `l < n(s)` exactly when `τ_l < s`, which spares the search on most cycles
        let open = match self.epochs.back() {
            Some(e) => (self.schedule.tau(e.index) as f64) < t as f64,
            None => true,
        };
        if open {
            let cur = self.schedule.epoch_index(t as f64);
            let windows = self.slots.iter().map(|&s| EpochStats::empty(s, self.m)).collect();
            self.epochs.push_back(Epoch { index: cur, windows });
            self.closed = None;
        }
        let low = self.schedule.alpha() * t as f64;
        while let Some(e) = self.epochs.front() {
            if (self.schedule.tau(e.index) as f64) < low {
                self.epochs.pop_front();
                self.closed = None;
            } else {
                break;
            }
        }
    }

    fn current_mut(&mut self) -> &mut Epoch {
        self.epochs.back_mut().expect("roll_epochs must run before updates")
    }

    /// Count this cycle's records towards epoch `n(t)`.
    pub fn increment_counters(&mut self, records: &[EnergyRecord]) {
        let cur = self.current_mut();
        for r in records {
            cur.windows[r.window].n += 1;
        }
    }

    fn apply_fe(&mut self, records: &[EnergyRecord], log_r: &[Vec<f64>]) {
        let cur = self.current_mut();
        for (r, lr) in records.iter().zip(log_r) {
            let st = &mut cur.windows[r.window];
            for (s, &v) in lr.iter().enumerate() {
                st.log_w[s] = log_add_exp(st.log_w[s], v);
            }
        }
    }

    fn apply_psi(&mut self, records: &[EnergyRecord], log_r: &[Vec<f64>], psi: &[Vec<f64>]) {
        let m = self.m;
        if m == 0 {
            return;
        }
        let cur = self.current_mut();
        // Every record of the cycle is weighed against the same previous average.
        let old: Vec<Vec<f64>> = cur.windows.iter().map(|w| w.psi.clone()).collect();
        for ((r, lr), ps) in records.iter().zip(log_r).zip(psi) {
            let st = &mut cur.windows[r.window];
            let prev = &old[r.window];
            for (s, &v) in lr.iter().enumerate() {
                if v == f64::NEG_INFINITY || st.log_w[s] == f64::NEG_INFINITY {
                    continue;
                }
                let c = (v - st.log_w[s]).exp();
                for i in 0..m {
                    st.psi[s * m + i] += c * (ps[s * m + i] - prev[s * m + i]);
                }
            }
        }
    }

    fn apply_tilts(&mut self, records: &[EnergyRecord], layout_slot: &dyn Fn(usize, usize) -> usize, gamma: &[Vec<f64>]) {
        let mut visits = std::mem::take(&mut self.tilt_visits);
        let mut counts = std::mem::take(&mut self.tilt_counts);
        for v in visits.iter_mut() {
            v.fill(0.0);
        }
        counts.fill(0);
        for r in records {
            let s = layout_slot(r.window, r.rung);
            visits[r.window][s] += 1.0 / gamma[r.window][s];
            counts[r.window] += 1;
        }
        let cur = self.current_mut();
        for (j, st) in cur.windows.iter_mut().enumerate() {
            if counts[j] == 0 {
                continue;
            }
            let n_new = st.n as f64;
            let n_old = n_new - counts[j] as f64;
            for s in 0..st.tilt.len() {
                let o = st.tilt[s];
                st.tilt[s] = o + ((n_old - n_new) * o + visits[j][s]) / n_new;
            }
        }
        self.tilt_visits = visits;
        self.tilt_counts = counts;
    }

    /// Free-energy recursion for epoch `n(t)`; counters must already include
    /// this cycle's records.
    pub fn update_epoch_fe(&mut self, records: &[EnergyRecord], weights: &SamplingWeights) {
        let lr: Vec<_> = records.iter().map(|r| log_importance_ratios(r, weights)).collect();
        self.apply_fe(records, &lr);
    }

    /// Ψ recursion for epoch `n(t)`; runs after [`Self::update_epoch_fe`].
    /// `psi[r]` holds `slots * m` observable values for record `r`.
    pub fn update_epoch_psi(&mut self, records: &[EnergyRecord], weights: &SamplingWeights, psi: &[Vec<f64>]) {
        let lr: Vec<_> = records.iter().map(|r| log_importance_ratios(r, weights)).collect();
        self.apply_psi(records, &lr, psi);
    }

    /// Tilt recursion for epoch `n(t)` using the rung densities in force at
    /// the start of the cycle.
    pub fn update_epoch_tilts(&mut self, records: &[EnergyRecord], slot: &dyn Fn(usize, usize) -> usize, gamma: &[Vec<f64>]) {
        self.apply_tilts(records, slot, gamma);
    }

    /// Roll, count, and apply every recursion for cycle `t`.
    pub fn ingest(
        &mut self,
        t: u64,
        records: &[EnergyRecord],
        weights: &SamplingWeights,
        slot: &dyn Fn(usize, usize) -> usize,
        gamma: &[Vec<f64>],
        psi: &[Vec<f64>],
    ) {
        self.roll_epochs(t);
        self.increment_counters(records);
        let mut lr = std::mem::take(&mut self.log_r);
        lr.resize_with(records.len(), Vec::new);
        for (r, buf) in records.iter().zip(lr.iter_mut()) {
            log_importance_ratios_into(r, weights, buf);
        }
        self.apply_fe(records, &lr[..records.len()]);
        self.apply_psi(records, &lr[..records.len()], psi);
        self.log_r = lr;
        self.apply_tilts(records, slot, gamma);
    }

    /// All-epoch estimates per window.
    pub fn combine_epochs(&mut self) -> Vec<WindowEstimate> {
        self.combined().to_vec()
    }

    /// [`Self::combine_epochs`] into a buffer owned by the ledger.
    pub fn combined(&mut self) -> &[WindowEstimate] {
        let m = self.m;
        let nw = self.slots.len();
        if self.closed.is_none() {
            let mut agg: Vec<Aggregate> = self.slots.iter().map(|&s| Aggregate::empty(s, m)).collect();
            let live = self.epochs.len();
            for e in self.epochs.iter().take(live.saturating_sub(1)) {
                for j in 0..nw {
                    agg[j].add(&e.windows[j], m);
                }
            }
            self.closed = Some(agg);
        }
        let closed = self.closed.as_ref().unwrap();
        let cur = self.epochs.back();
        for (j, out) in self.combined.iter_mut().enumerate() {
            closed[j].estimate_with_into(cur.map(|c| &c.windows[j]), m, out);
        }
        &self.combined
    }

    /// All-epoch estimates with one live epoch left out (jackknife replicate).
    pub fn combine_without(&self, epoch_index: u32) -> Vec<WindowEstimate> {
        let m = self.m;
        (0..self.slots.len())
            .map(|j| {
                let mut a = Aggregate::empty(self.slots[j], m);
                for e in self.epochs.iter().filter(|e| e.index != epoch_index) {
                    a.add(&e.windows[j], m);
                }
                a.estimate(m)
            })
            .collect()
    }

    /// Rows `(window, epoch, slot, N, ℱ, Ψ..., o)` of the live ledger.
    pub fn snapshot_rows(&self) -> Vec<(usize, u32, usize, u64, f64, Vec<f64>, f64)> {
        let mut rows = Vec::new();
        for e in &self.epochs {
            for (j, st) in e.windows.iter().enumerate() {
                for s in 0..st.log_w.len() {
                    let psi = st.psi[s * self.m..(s + 1) * self.m].to_vec();
                    rows.push((j, e.index, s, st.n, st.epoch_fe(s), psi, st.tilt[s]));
                }
            }
        }
        rows
    }
}
