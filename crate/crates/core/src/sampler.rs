//! Windowed simulated-tempering kernels: window swap, in-window rung Gibbs
//! move, state move, and the per-cycle multireplica driver.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TssError};
use crate::models::ModelFamily;
use crate::numeric::log_bias_weight;
use crate::windows::WindowLayout;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaState {
    pub x: f64,
    pub k: usize,
    pub j: usize,
}

/// `(pi, F)` for one window, both indexed like `layout.members(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWeights {
    pi: Vec<f64>,
    f: Vec<f64>,
    log_pi: Vec<f64>,
}

impl WindowWeights {
    pub fn new(pi: Vec<f64>, f: Vec<f64>) -> Self {
        assert_eq!(pi.len(), f.len());
        let log_pi = pi.iter().map(|p| p.ln()).collect();
        WindowWeights { pi, f, log_pi }
    }

    /// Overwrite in place, reusing the buffers.
    pub fn assign(&mut self, pi: impl IntoIterator<Item = f64>, f: &[f64]) {
        let old = self.pi.len();
        let mut same = true;
        let mut n = 0;
        for v in pi {
            if n < old {
                if self.pi[n].to_bits() != v.to_bits() {
                    self.pi[n] = v;
                    same = false;
                }
            } else {
                self.pi.push(v);
            }
            n += 1;
        }
        self.pi.truncate(n);
        assert_eq!(n, f.len());
        self.f.clear();
        self.f.extend_from_slice(f);
        // π is often unchanged from cycle to cycle (fixed γ, η = 0)
        if !same || n != old {
            self.log_pi.clear();
            self.log_pi.extend(self.pi.iter().map(|p| p.ln()));
        }
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    /// `log sum_l pi_l exp(F_l - H_l)` for per-slot energies `h`.
    pub fn log_denominator(&self, h: &[f64]) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for i in 0..h.len() {
            m = m.max(log_bias_weight(self.log_pi[i], self.f[i], h[i]));
        }
        if !m.is_finite() {
            return m;
        }
        let s: f64 = (0..h.len()).map(|i| (log_bias_weight(self.log_pi[i], self.f[i], h[i]) - m).exp()).sum();
        m + s.ln()
    }
}

/// Per-window sampling weights; `None` marks a window without estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingWeights {
    windows: Vec<Option<WindowWeights>>,
}

impl SamplingWeights {
    pub fn undefined(window_count: usize) -> Self {
        SamplingWeights { windows: vec![None; window_count] }
    }

    /// The same global `F` in every window, with per-window rung densities as `pi`.
    pub fn frozen(layout: &WindowLayout, gamma: &[Vec<f64>], f: &[f64]) -> Self {
        let windows = (0..layout.window_count())
            .map(|j| {
                let fj = layout.members(j).iter().map(|&k| f[k]).collect();
                Some(WindowWeights::new(gamma[j].clone(), fj))
            })
            .collect();
        SamplingWeights { windows }
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn set(&mut self, j: usize, w: Option<WindowWeights>) {
        self.windows[j] = w;
    }

    /// Set window `j` to `(pi, f)`, reusing its buffers when it has some.
    pub fn assign(&mut self, j: usize, pi: impl IntoIterator<Item = f64>, f: &[f64]) {
        match &mut self.windows[j] {
            Some(w) => w.assign(pi, f),
            slot => *slot = Some(WindowWeights::new(pi.into_iter().collect(), f.to_vec())),
        }
    }

    pub fn get(&self, j: usize) -> Option<&WindowWeights> {
        self.windows[j].as_ref()
    }

    pub fn is_defined(&self, j: usize) -> bool {
        self.windows[j].is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwapOutcome {
    Swapped(ReplicaState),
    Hold(ReplicaState),
}

impl SwapOutcome {
    pub fn state(&self) -> ReplicaState {
        match *self {
            SwapOutcome::Swapped(s) | SwapOutcome::Hold(s) => s,
        }
    }
}

/// Move to the other window containing the current rung. The replica holds
/// only while its own window has no estimates yet (its first cycle); a
/// destination without estimates is entered and picks them up from the
/// energies recorded at the end of the cycle.
pub fn window_swap(state: ReplicaState, layout: &WindowLayout, weights: &SamplingWeights) -> Result<SwapOutcome> {
    let other = layout.other_window(state.k, state.j)?;
    if !weights.is_defined(state.j) {
        return Ok(SwapOutcome::Hold(state));
    }
    Ok(SwapOutcome::Swapped(ReplicaState { j: other, ..state }))
}

/// Gibbs move over the rungs of the active window with probability
/// proportional to `pi_{j;k} exp(F_{j;k} - H_k(x))`.
pub fn rung_move<R: RngCore + ?Sized>(
    state: ReplicaState,
    weights: &SamplingWeights,
    layout: &WindowLayout,
    family: &ModelFamily,
    rng: &mut R,
    scratch: &mut Vec<f64>,
) -> Result<ReplicaState> {
    let w = weights
        .get(state.j)
        .ok_or_else(|| TssError::Domain(format!("window {} has no sampling weights", state.j)))?;
    let members = layout.members(state.j);
    scratch.clear();
    scratch.extend(
        members
            .iter()
            .enumerate()
            .map(|(i, &k)| log_bias_weight(w.log_pi[i], w.f[i], family.energy(k, state.x))),
    );
    let i = sample_log_categorical(scratch, &w.pi, rng).ok_or(TssError::DegenerateDistribution { window: state.j })?;
    Ok(ReplicaState { k: members[i], ..state })
}

/// Draw an index with probability proportional to `exp(logw)`. Entries equal
/// to `+inf` dominate and are split in proportion to `tie`.
pub fn sample_log_categorical<R: RngCore + ?Sized>(logw: &[f64], tie: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return None;
    }
    let weight = |i: usize| -> f64 {
        if m == f64::INFINITY {
            if logw[i] == f64::INFINITY {
                tie[i]
            } else {
                0.0
            }
        } else {
            (logw[i] - m).exp()
        }
    };
    let total: f64 = (0..logw.len()).map(weight).sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for i in 0..logw.len() {
        let wi = weight(i);
        if wi > 0.0 {
            acc += wi;
            last = Some(i);
            if u < acc {
                return Some(i);
            }
        }
    }
    last
}

/// Advance the state at fixed rung: one exact draw when the family has an
/// exact sampler, otherwise `n_steps` kernel steps.
pub fn state_move(state: ReplicaState, family: &ModelFamily, n_steps: usize, rng: &mut dyn RngCore) -> ReplicaState {
    if n_steps == 0 {
        return state;
    }
    if let Some(x) = family.sample_exact(state.k, rng) {
        return ReplicaState { x, ..state };
    }
    let mut x = state.x;
    for _ in 0..n_steps {
        x = family.kernel_step(state.k, x, rng).unwrap_or(x);
    }
    ReplicaState { x, ..state }
}

/// Energies of every rung of the active window at the end of a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub replica: usize,
    pub window: usize,
    pub rung: usize,
    pub x: f64,
    /// `H_k(x)` for `k` in `layout.members(window)`, same order.
    pub energies: Vec<f64>,
}

/// Randomness stream for one replica: the master seed selects the key, the
/// replica index selects the stream, so adding replicas leaves others intact.
pub fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica as u64);
    rng
}

/// Starting triple at rung `k0`: an exact draw when available, else `lambda_k0`.
pub fn initial_state(family: &ModelFamily, layout: &WindowLayout, k0: usize, rng: &mut dyn RngCore) -> ReplicaState {
    let x = family.sample_exact(k0, rng).unwrap_or(family.grid().lambda(k0)[0]);
    ReplicaState { x, k: k0, j: layout.home_window(k0) }
}

pub struct CycleParams {
    pub nu: usize,
    pub n_md: usize,
}

impl CycleParams {
    pub fn check(&self, family: &ModelFamily) -> Result<()> {
        if self.nu == 0 {
            return Err(TssError::Config("nu must be positive".into()));
        }
        if !family.has_exact_sampler() && self.n_md % self.nu != 0 {
            return Err(TssError::Config(format!("nu = {} must divide n_md = {}", self.nu, self.n_md)));
        }
        Ok(())
    }

    fn steps_per_move(&self, family: &ModelFamily) -> usize {
        if family.has_exact_sampler() {
            1
        } else {
            self.n_md / self.nu
        }
    }
}

/// One cycle for one replica: swap, then `nu` times (rung move, state move),
/// all under the same frozen weights, then the energy record at the final
/// state. Returns whether the replica held.
pub fn replica_cycle(
    index: usize,
    state: ReplicaState,
    weights: &SamplingWeights,
    layout: &WindowLayout,
    family: &ModelFamily,
    params: &CycleParams,
    rng: &mut ChaCha8Rng,
) -> Result<(ReplicaState, EnergyRecord, bool)> {
    let mut rec = EnergyRecord { replica: index, window: 0, rung: 0, x: 0.0, energies: Vec::new() };
    let (s, hold) = replica_cycle_into(index, state, weights, layout, family, params, rng, &mut rec)?;
    Ok((s, rec, hold))
}

/// [`replica_cycle`] writing into an existing record.
#[allow(clippy::too_many_arguments)]
pub fn replica_cycle_into(
    index: usize,
    state: ReplicaState,
    weights: &SamplingWeights,
    layout: &WindowLayout,
    family: &ModelFamily,
    params: &CycleParams,
    rng: &mut ChaCha8Rng,
    rec: &mut EnergyRecord,
) -> Result<(ReplicaState, bool)> {
    let (mut s, hold) = match window_swap(state, layout, weights)? {
        SwapOutcome::Swapped(s) => (s, false),
        SwapOutcome::Hold(s) => (s, true),
    };
    let steps = params.steps_per_move(family);
    // the record's energy buffer doubles as rung-move scratch
    let scratch = &mut rec.energies;
    let move_rungs = !hold && weights.is_defined(s.j);
    for _ in 0..params.nu {
        if move_rungs {
            s = rung_move(s, weights, layout, family, rng, scratch)?;
        }
        s = state_move(s, family, steps, rng);
    }
    scratch.clear();
    scratch.extend(layout.members(s.j).iter().map(|&k| family.energy(k, s.x)));
    rec.replica = index;
    rec.window = s.j;
    rec.rung = s.k;
    rec.x = s.x;
    Ok((s, hold))
}

/// Run one cycle for every replica. Replicas may run on separate threads;
/// results are returned in replica order and do not depend on scheduling.
pub fn run_cycle(
    replicas: &mut [ReplicaState],
    rngs: &mut [ChaCha8Rng],
    weights: &SamplingWeights,
    layout: &WindowLayout,
    family: &ModelFamily,
    params: &CycleParams,
    parallel: bool,
) -> Result<Vec<EnergyRecord>> {
    let mut out = Vec::new();
    run_cycle_into(replicas, rngs, weights, layout, family, params, parallel, &mut out)?;
    Ok(out)
}

/// [`run_cycle`] reusing the records (and their buffers) in `out`.
#[allow(clippy::too_many_arguments)]
pub fn run_cycle_into(
    replicas: &mut [ReplicaState],
    rngs: &mut [ChaCha8Rng],
    weights: &SamplingWeights,
    layout: &WindowLayout,
    family: &ModelFamily,
    params: &CycleParams,
    parallel: bool,
    out: &mut Vec<EnergyRecord>,
) -> Result<()> {
    assert_eq!(replicas.len(), rngs.len());
    out.resize_with(replicas.len(), || EnergyRecord { replica: 0, window: 0, rung: 0, x: 0.0, energies: Vec::new() });
    let step = |(i, ((s, rng), rec)): (usize, ((&mut ReplicaState, &mut ChaCha8Rng), &mut EnergyRecord))| -> Result<()> {
        let (ns, _) = replica_cycle_into(i, *s, weights, layout, family, params, rng, rec)?;
        *s = ns;
        Ok(())
    };
    if parallel && replicas.len() > 1 {
        replicas.par_iter_mut().zip(rngs.par_iter_mut()).zip(out.par_iter_mut()).enumerate().try_for_each(step)
    } else {
        replicas.iter_mut().zip(rngs.iter_mut()).zip(out.iter_mut()).enumerate().try_for_each(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_gaussian_ladder, make_identical_pair, make_uniform_pair, RungGrid};
    use crate::windows::{build_layout, WindowSpec};

    fn pair_layout() -> WindowLayout {
        build_layout(&RungGrid::linear(2).unwrap(), &WindowSpec::FullDouble).unwrap()
    }

    fn weights(layout: &WindowLayout, f: &[f64]) -> SamplingWeights {
        SamplingWeights::frozen(layout, &[vec![0.5, 0.5], vec![0.5, 0.5]], f)
    }

    #[test]
    fn rung_move_frequencies_at_overlap() {
        let m = make_uniform_pair(0.1).unwrap();
        let layout = pair_layout();
        let w = weights(&layout, &[0.0, 0.0]);
        let mut rng = replica_rng(1, 0);
        let mut scratch = Vec::new();
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            let s = rung_move(ReplicaState { x: 0.0, k: 0, j: 0 }, &w, &layout, &m.family, &mut rng, &mut scratch).unwrap();
            hits += s.k;
        }
        let p = hits as f64 / n as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn rung_move_forced_by_support() {
        let m = make_uniform_pair(0.1).unwrap();
        let layout = pair_layout();
        let w = weights(&layout, &[0.0, 0.0]);
        let mut rng = replica_rng(2, 0);
        let mut scratch = Vec::new();
        for _ in 0..1000 {
            let s = rung_move(ReplicaState { x: 0.5, k: 0, j: 1 }, &w, &layout, &m.family, &mut rng, &mut scratch).unwrap();
            assert_eq!(s.k, 1);
        }
        let err = rung_move(ReplicaState { x: 5.0, k: 0, j: 1 }, &w, &layout, &m.family, &mut rng, &mut scratch);
        assert_eq!(err, Err(TssError::DegenerateDistribution { window: 1 }));
    }

    #[test]
    fn identical_pair_rung_probability() {
        let m = make_identical_pair();
        let layout = pair_layout();
        let delta = 0.7;
        let w = weights(&layout, &[0.0, delta]);
        let mut rng = replica_rng(3, 0);
        let mut scratch = Vec::new();
        let n = 100_000;
        let hits: usize = (0..n)
            .map(|_| rung_move(ReplicaState { x: 0.3, k: 0, j: 0 }, &w, &layout, &m.family, &mut rng, &mut scratch).unwrap().k)
            .sum();
        let expect = 1.0 / (1.0 + (-delta).exp());
        let p = hits as f64 / n as f64;
        assert!((p - expect).abs() < 4.0 * (expect * (1.0 - expect) / n as f64).sqrt());
    }

    #[test]
    fn swap_and_hold() {
        let grid = RungGrid::linear(16).unwrap();
        let layout = build_layout(
            &grid,
            &WindowSpec::Explicit { members: vec![(0..16).collect(), (0..8).collect(), (8..16).collect()] },
        )
        .unwrap();
        let mut w = SamplingWeights::undefined(3);
        let s = ReplicaState { x: 7.0, k: 7, j: 0 };
        assert_eq!(window_swap(s, &layout, &w).unwrap(), SwapOutcome::Hold(s));
        w.set(0, Some(WindowWeights::new(vec![1.0 / 16.0; 16], vec![0.0; 16])));
        let s2 = window_swap(s, &layout, &w).unwrap();
        assert_eq!(s2, SwapOutcome::Swapped(ReplicaState { j: 1, ..s }));
        w.set(1, Some(WindowWeights::new(vec![1.0 / 8.0; 8], vec![0.0; 8])));
        assert_eq!(window_swap(s2.state(), &layout, &w).unwrap().state(), s);
    }

    #[test]
    fn state_move_contracts() {
        let m = make_gaussian_ladder(5).unwrap();
        let mut rng = replica_rng(4, 0);
        let s = ReplicaState { x: 1.0, k: 5, j: 0 };
        let a = state_move(s, &m.family, 1, &mut rng);
        let b = state_move(s, &m.family, 1, &mut rng);
        assert_ne!(a.x, b.x);
        assert_eq!((a.k, a.j), (5, 0));
        let kernel_only = m.family.clone().without_exact_sampler();
        assert_eq!(state_move(s, &kernel_only, 0, &mut rng), s);
        assert_ne!(state_move(s, &kernel_only, 50, &mut rng).x, s.x);
    }

    #[test]
    fn cycle_records_in_replica_order_and_deterministic() {
        let m = make_gaussian_ladder(7).unwrap();
        let layout = build_layout(m.family.grid(), &WindowSpec::FullDouble).unwrap();
        let g = vec![vec![1.0 / 8.0; 8]; 2];
        let w = SamplingWeights::frozen(&layout, &g, &[0.0; 8]);
        let params = CycleParams { nu: 3, n_md: 3 };
        let run = |parallel: bool| {
            let mut rngs: Vec<_> = (0..4).map(|r| replica_rng(9, r)).collect();
            let mut reps: Vec<_> = (0..4).map(|r| initial_state(&m.family, &layout, r, &mut rngs[r])).collect();
            let mut all = Vec::new();
            for _ in 0..50 {
                all.extend(run_cycle(&mut reps, &mut rngs, &w, &layout, &m.family, &params, parallel).unwrap());
            }
            all
        };
        let a = run(false);
        let b = run(true);
        assert_eq!(a, b);
        assert!(a.chunks(4).all(|c| c.iter().enumerate().all(|(i, r)| r.replica == i)));
        assert!(a.iter().all(|r| r.energies.len() == layout.members(r.window).len()));
    }

    #[test]
    fn replica_streams_are_stable() {
        let mut a = replica_rng(5, 2);
        let mut b = replica_rng(5, 2);
        let mut c = replica_rng(5, 3);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn nu_must_divide_n_md_for_kernels() {
        let m = make_gaussian_ladder(3).unwrap();
        let k = m.family.clone().without_exact_sampler();
        assert!(CycleParams { nu: 3, n_md: 10 }.check(&k).is_err());
        assert!(CycleParams { nu: 25, n_md: 4800 }.check(&k).is_ok());
        assert!(CycleParams { nu: 3, n_md: 10 }.check(&m.family).is_ok());
    }
}
