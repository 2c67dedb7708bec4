//! Stitching per-window estimates into global quantities: window marginals,
//! visit-control offsets and free energies, the sampling density π, and the
//! reported free energies.
//!
//! Per-window inputs are indexed like `layout.members(j)`. Windows that have
//! not been visited are passed as `visited[j] = false` and are left out.
//! Entries whose per-window free energy is not finite (a rung whose ratios
//! have all been zero so far) are left out of the global solves as if their
//! γ were zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TssError};
use crate::numeric::log_sum_exp_iter;
use crate::sampler::SamplingWeights;
use crate::windows::WindowLayout;

const EIGEN_RESIDUAL: f64 = 1e-10;
const DENSE_LIMIT: usize = 64;

/// Transition matrix of the window process restricted to visited windows,
/// with tilted rung masses `γ o` (Q_{ij}, left-stochastic).
fn window_matrix(gamma: &[Vec<f64>], tilts: &[Vec<f64>], visited: &[bool], layout: &WindowLayout) -> DMatrix<f64> {
    let nw = layout.window_count();
    let mut q = DMatrix::<f64>::zeros(nw, nw);
    for j in 0..nw {
        if !visited[j] {
            q[(j, j)] = 1.0;
            continue;
        }
        let mass: f64 = gamma[j].iter().zip(&tilts[j]).map(|(g, o)| g * o).sum();
        if !(mass > 0.0) {
            q[(j, j)] = 1.0;
            continue;
        }
        for (s, &k) in layout.members(j).iter().enumerate() {
            let w = 0.5 * gamma[j][s] * tilts[j][s] / mass;
            for i in layout.win(k) {
                let row = if visited[i] { i } else { j };
                q[(row, j)] += w;
            }
        }
    }
    q
}

/// Stochastic `p` with `Qp = p`; among several, the one of least Euclidean norm.
fn stationary(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = q.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let p = if n <= DENSE_LIMIT {
        let a = q - DMatrix::<f64>::identity(n, n);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let smax = svd.singular_values.max();
        let tol = 1e-12 * (n as f64) * smax.max(1.0);
        let mut null: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
        if null.is_empty() {
            null.push(svd.singular_values.imin());
        }
        // p ∝ P_null 1: the least-norm vector of the null space summing to one
        let mut p = DVector::<f64>::zeros(n);
        for &i in &null {
            let v = v_t.row(i).transpose();
            p += &v * v.sum();
        }
        p
    } else {
        let mut p = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..100_000 {
            let next = q * &p;
            let diff = (&next - &p).amax();
            p = next;
            if diff < 1e-14 {
                break;
            }
        }
        p
    };
    let s = p.sum();
    if !(s.abs() > 0.0) {
        return Err(TssError::SingularSystem("stationary vector has zero mass".into()));
    }
    let mut p = p / s;
    // transient windows come out at rounding level; make them exactly zero
    p.iter_mut().for_each(|v| {
        if *v < 1e-14 {
            *v = 0.0
        }
    });
    let p = &p / p.sum();
    let resid = (q * &p - &p).amax();
    if resid > EIGEN_RESIDUAL {
        return Err(TssError::SingularSystem(format!("eigenvector residual {resid:e}")));
    }
    Ok(p)
}

/// Window marginals `p` from the tilted window transition matrix.
pub fn window_marginals(gamma: &[Vec<f64>], tilts: &[Vec<f64>], visited: &[bool], layout: &WindowLayout) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..layout.window_count()).filter(|&j| visited[j]).collect();
    if idx.is_empty() {
        return Err(TssError::NoVisitedWindows);
    }
    let full = window_matrix(gamma, tilts, visited, layout);
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])]);
    let ps = stationary(&sub)?;
    let mut p = vec![0.0; layout.window_count()];
    for (a, &j) in idx.iter().enumerate() {
        p[j] = ps[a];
    }
    Ok(p)
}

/// `‖Qp - p‖∞` for the tilted window matrix (diagnostic).
pub fn marginal_residual(gamma: &[Vec<f64>], tilts: &[Vec<f64>], visited: &[bool], layout: &WindowLayout, p: &[f64]) -> f64 {
    let q = window_matrix(gamma, tilts, visited, layout);
    let pv = DVector::from_column_slice(p);
    (q * &pv - &pv).amax()
}

/// Rung marginals `q_k = Σ_{j∈win(k)} p_j γ_{j;k} o_{j;k} / Σ_{l∈W_j} γ_{j;l} o_{j;l}`.
pub fn rung_marginal(p: &[f64], gamma: &[Vec<f64>], tilts: &[Vec<f64>], layout: &WindowLayout) -> Vec<f64> {
    let mut q = vec![0.0; layout.rung_count()];
    for j in 0..layout.window_count() {
        if p[j] <= 0.0 {
            continue;
        }
        let mass: f64 = gamma[j].iter().zip(&tilts[j]).map(|(g, o)| g * o).sum();
        if !(mass > 0.0) {
            continue;
        }
        for (s, &k) in layout.members(j).iter().enumerate() {
            q[k] += p[j] * gamma[j][s] * tilts[j][s] / mass;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OffsetOptions {
    fn default() -> Self {
        OffsetOptions { tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSolution {
    pub f: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub damped: bool,
    /// Solved by Newton steps on the convex objective; `false` when those
    /// failed and the fixed-point sweeps did the work.
    pub newton: bool,
}

fn usable(fe: &[Vec<f64>], gamma: &[Vec<f64>], j: usize, s: usize) -> bool {
    fe[j][s].is_finite() && gamma[j][s] > 0.0
}

/// `log Σ_{i∈win(k), p_i>0} p_i γ_{i;k} e^{(F_{i;k} - f_i)/(η+1)}` for every rung.
fn log_mix(fe: &[Vec<f64>], gamma: &[Vec<f64>], p: &[f64], f: &[f64], b: f64, layout: &WindowLayout) -> Vec<f64> {
    (0..layout.rung_count())
        .map(|k| {
            let terms = layout.win(k).into_iter().filter_map(|i| {
                let s = layout.slot(i, k).unwrap();
                (p[i] > 0.0 && usable(fe, gamma, i, s))
                    .then(|| p[i].ln() + gamma[i][s].ln() + b * (fe[i][s] - f[i]))
            });
            log_sum_exp_iter(terms)
        })
        .collect()
}

/// One application of `f_j <- (η+1) log g_j(f)` before normalization.
fn offset_map(fe: &[Vec<f64>], gamma: &[Vec<f64>], p: &[f64], q: &[f64], f: &[f64], eta: f64, layout: &WindowLayout) -> Vec<f64> {
    let b = 1.0 / (eta + 1.0);
    let ld = log_mix(fe, gamma, p, f, b, layout);
    (0..layout.window_count())
        .map(|j| {
            if p[j] <= 0.0 {
                return 0.0;
            }
            let terms = layout.members(j).iter().enumerate().filter_map(|(s, &k)| {
                (q[k] > 0.0 && usable(fe, gamma, j, s) && ld[k].is_finite())
                    .then(|| q[k].ln() + gamma[j][s].ln() + b * fe[j][s] - ld[k])
            });
            let lg = log_sum_exp_iter(terms);
            if lg.is_finite() {
                (eta + 1.0) * lg
            } else {
                f[j]
            }
        })
        .collect()
}

fn gauge(f: &mut [f64], p: &[f64]) {
    let c: f64 = f.iter().zip(p).map(|(a, b)| a * b).sum();
    for (fj, &pj) in f.iter_mut().zip(p) {
        *fj = if pj > 0.0 { *fj - c } else { 0.0 };
    }
}

/// Visit-control window offsets from `f0`, normalized to `Σ p_j f_j = 0`.
///
/// Damped Newton on the convex objective goes first: warm-started from the
/// previous cycle it needs a handful of steps, where the fixed-point sweeps
/// contract slowly between weakly coupled windows (around a hundred sweeps
/// per solve on a 16-rung ladder). The sweeps remain as the fallback.
pub fn solve_offsets(
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    p: &[f64],
    q: &[f64],
    eta: f64,
    layout: &WindowLayout,
    opts: OffsetOptions,
    f0: Option<&[f64]>,
) -> Result<OffsetSolution> {
    if !(eta > 0.0) {
        return Err(TssError::Domain("offsets need eta > 0".into()));
    }
    let mut f: Vec<f64> = f0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]);
    gauge(&mut f, p);
    if let Some((f, iterations)) = newton_offsets(fe, gamma, p, q, eta, layout, opts, f.clone()) {
        let mut next = offset_map(fe, gamma, p, q, &f, eta, layout);
        gauge(&mut next, p);
        let residual = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        return Ok(OffsetSolution { f, iterations, residual, damped: false, newton: true });
    }
    let mut omega = 1.0;
    let mut prev = f64::INFINITY;
    let mut rises = 0;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut next = offset_map(fe, gamma, p, q, &f, eta, layout);
        gauge(&mut next, p);
        residual = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < opts.tol {
            return Ok(OffsetSolution { f: next, iterations: it, residual, damped: omega < 1.0, newton: false });
        }
        if residual > prev {
            rises += 1;
            if rises >= 2 && omega == 1.0 {
                omega = 0.5;
            }
        }
        prev = residual;
        for (fj, nj) in f.iter_mut().zip(&next) {
            *fj += omega * (nj - *fj);
        }
        gauge(&mut f, p);
    }
    Err(TssError::NonConvergence { iterations: opts.max_iter, residual })
}

/// Gradient and Hessian of the offset objective over the active windows.
fn objective_derivatives(
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    p: &[f64],
    q: &[f64],
    f: &[f64],
    b: f64,
    layout: &WindowLayout,
    active: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = active.len();
    let pos: Vec<Option<usize>> = (0..p.len()).map(|j| active.iter().position(|&a| a == j)).collect();
    let mut g = DVector::from_iterator(n, active.iter().map(|&j| b * p[j]));
    let mut h = DMatrix::<f64>::zeros(n, n);
    let ld = log_mix(fe, gamma, p, f, b, layout);
    for k in 0..layout.rung_count() {
        if !(q[k] > 0.0) || !ld[k].is_finite() {
            continue;
        }
        let w: Vec<(usize, f64)> = layout
            .win(k)
            .into_iter()
            .filter_map(|i| {
                let s = layout.slot(i, k).unwrap();
                let a = pos[i]?;
                usable(fe, gamma, i, s).then(|| (a, (p[i].ln() + gamma[i][s].ln() + b * (fe[i][s] - f[i]) - ld[k]).exp()))
            })
            .collect();
        for &(a, wa) in &w {
            g[a] -= b * q[k] * wa;
            h[(a, a)] += b * b * q[k] * wa;
            for &(c, wc) in &w {
                h[(a, c)] -= b * b * q[k] * wa * wc;
            }
        }
    }
    (g, h)
}

/// Damped Newton on the offset objective subject to `Σ p_j f_j = 0`.
#[allow(clippy::too_many_arguments)]
fn newton_offsets(
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    p: &[f64],
    q: &[f64],
    eta: f64,
    layout: &WindowLayout,
    opts: OffsetOptions,
    mut f: Vec<f64>,
) -> Option<(Vec<f64>, usize)> {
    let b = 1.0 / (eta + 1.0);
    let active: Vec<usize> = (0..p.len()).filter(|&j| p[j] > 0.0).collect();
    let n = active.len();
    let obj = |f: &[f64]| offset_objective(fe, gamma, p, q, f, eta, layout);
    let mut cur = obj(&f);
    let mut radius = 8.0;
    for it in 1..=opts.max_iter {
        let (g, h) = objective_derivatives(fe, gamma, p, q, &f, b, layout, &active);
        // bordered system [H p; p^T 0] keeps the step on the gauge plane;
        // a relative ridge handles exactly flat directions
        let ridge = 1e-14 * h.diagonal().amax().max(1e-300);
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&h);
        for i in 0..n {
            a[(i, i)] += ridge;
            a[(i, n)] = p[active[i]];
            a[(n, i)] = p[active[i]];
        }
        let mut rhs = DVector::<f64>::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        let d = a.lu().solve(&rhs)?;
        // near-linear stretches (windows whose estimates disagree by
        // thousands) give a vanishing Hessian; cap the stride and let it grow
        let big = (0..n).map(|i| d[i].abs()).fold(0.0, f64::max);
        let mut d = d.rows(0, n).into_owned();
        if big > radius {
            d *= radius / big;
        }
        let slope: f64 = (0..n).map(|i| g[i] * d[i]).sum();
        // once the predicted decrease is below the rounding of the objective,
        // Armijo comparisons are noise and further steps only chase it: take
        // this step and stop
        let flat = slope.abs() <= 1e-14 * (1.0 + cur.abs());
        let mut step = 1.0;
        loop {
            let mut trial = f.clone();
            for (i, &j) in active.iter().enumerate() {
                trial[j] += step * d[i];
            }
            let val = obj(&trial);
            if flat || val <= cur + 1e-4 * step * slope {
                let change = (0..n).map(|i| (step * d[i]).abs()).fold(0.0, f64::max);
                f = trial;
                gauge(&mut f, p);
                cur = val;
                if change < opts.tol || flat {
                    return Some((f, it));
                }
                radius = if step == 1.0 { 2.0 * radius } else { (2.0 * change).max(1e-6) };
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return None;
            }
        }
    }
    None
}

/// The convex objective whose minimizer is the offset vector:
/// `(1/(η+1)) Σ_j p_j f_j + Σ_k q_k log Σ_{j∈win(k)} p_j γ_{j;k} e^{(F_{j;k} - f_j)/(η+1)}`.
pub fn offset_objective(fe: &[Vec<f64>], gamma: &[Vec<f64>], p: &[f64], q: &[f64], f: &[f64], eta: f64, layout: &WindowLayout) -> f64 {
    let b = 1.0 / (eta + 1.0);
    let ld = log_mix(fe, gamma, p, f, b, layout);
    let lin: f64 = p.iter().zip(f).map(|(a, c)| a * c).sum::<f64>() * b;
    lin + (0..q.len()).filter(|&k| q[k] > 0.0).map(|k| q[k] * ld[k]).sum::<f64>()
}

/// Visit-control free energies; `None` where `q_k = 0`.
pub fn visit_control_fes(
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    p: &[f64],
    q: &[f64],
    f: &[f64],
    eta: f64,
    layout: &WindowLayout,
) -> Vec<Option<f64>> {
    let b = 1.0 / (eta + 1.0);
    let ld = log_mix(fe, gamma, p, f, b, layout);
    (0..layout.rung_count())
        .map(|k| (q[k] > 0.0 && ld[k].is_finite()).then(|| (eta + 1.0) * (ld[k] - q[k].ln())))
        .collect()
}

/// `π_{j;k} ∝ γ_{j;k} exp(η/(η+1) (F°_k - F_{j;k}))`, then mixed with γ by
/// `ε_π`. Rungs without a visit-control free energy (never visited) share the
/// unregularized mass in proportion to γ. Windows not visited stay undefined.
pub fn pi_tss(
    fe: &[Vec<f64>],
    fcirc: &[Option<f64>],
    gamma: &[Vec<f64>],
    eta: f64,
    eps_pi: f64,
    visited: &[bool],
    layout: &WindowLayout,
) -> SamplingWeights {
    let mut w = SamplingWeights::undefined(layout.window_count());
    pi_tss_into(&mut w, fe, fcirc, gamma, eta, eps_pi, visited, layout);
    w
}

/// [`pi_tss`] written over existing weights.
#[allow(clippy::too_many_arguments)]
pub fn pi_tss_into(
    w: &mut SamplingWeights,
    fe: &[Vec<f64>],
    fcirc: &[Option<f64>],
    gamma: &[Vec<f64>],
    eta: f64,
    eps_pi: f64,
    visited: &[bool],
    layout: &WindowLayout,
) {
    let beta = eta / (eta + 1.0);
    for j in 0..layout.window_count() {
        if !visited[j] {
            w.set(j, None);
            continue;
        }
        let g = &gamma[j];
        if eta == 0.0 {
            w.assign(j, g.iter().copied(), &fe[j]);
        } else {
            let logw: Vec<f64> = layout
                .members(j)
                .iter()
                .enumerate()
                .map(|(s, &k)| match fcirc[k] {
                    None => f64::INFINITY,
                    Some(fc) if fe[j][s].is_finite() => g[s].ln() + beta * (fc - fe[j][s]),
                    Some(_) => f64::NEG_INFINITY,
                })
                .collect();
            let raw = normalize_log(&logw, g);
            w.assign(j, raw.iter().zip(g).map(|(r, gs)| (1.0 - eps_pi) * r + eps_pi * gs), &fe[j]);
        }
    }
}

fn normalize_log(logw: &[f64], tie: &[f64]) -> Vec<f64> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = if m == f64::INFINITY {
        logw.iter().zip(tie).map(|(&l, &t)| if l == f64::INFINITY { t } else { 0.0 }).collect()
    } else if m == f64::NEG_INFINITY {
        tie.to_vec()
    } else {
        logw.iter().map(|&l| (l - m).exp()).collect()
    };
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reported {
    pub p: Vec<f64>,
    /// `γ^TSS_k`; zero for rungs outside the visited windows.
    pub gamma: Vec<f64>,
    pub f: Vec<f64>,
    /// Reported free energies; `None` for rungs outside the visited windows.
    pub fe: Vec<Option<f64>>,
}

/// The η→∞ reported free energies (tilts set to one).
pub fn reported_fes(fe: &[Vec<f64>], gamma: &[Vec<f64>], visited: &[bool], layout: &WindowLayout) -> Result<Reported> {
    let nw = layout.window_count();
    // entries with a non-finite F are treated as γ = 0, then windows are renormalized
    let mut g_eff: Vec<Vec<f64>> = Vec::with_capacity(nw);
    let mut vis = visited.to_vec();
    for j in 0..nw {
        let row: Vec<f64> = (0..gamma[j].len()).map(|s| if usable(fe, gamma, j, s) { gamma[j][s] } else { 0.0 }).collect();
        let tot: f64 = row.iter().sum();
        if tot > 0.0 {
            g_eff.push(row.iter().map(|v| v / tot).collect());
        } else {
            vis[j] = false;
            g_eff.push(row);
        }
    }
    let ones: Vec<Vec<f64>> = gamma.iter().map(|g| vec![1.0; g.len()]).collect();
    let p = window_marginals(&g_eff, &ones, &vis, layout)?;
    let k = layout.rung_count();
    let mut gt = vec![0.0; k];
    let mut fbar = vec![0.0; k];
    for j in (0..nw).filter(|&j| p[j] > 0.0) {
        for (s, &r) in layout.members(j).iter().enumerate() {
            if g_eff[j][s] > 0.0 {
                gt[r] += p[j] * g_eff[j][s];
                fbar[r] += p[j] * g_eff[j][s] * fe[j][s];
            }
        }
    }
    for r in 0..k {
        if gt[r] > 0.0 {
            fbar[r] /= gt[r];
        }
    }
    let idx: Vec<usize> = (0..nw).filter(|&j| p[j] > 0.0).collect();
    let n = idx.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (ai, &i) in idx.iter().enumerate() {
        for (s, &r) in layout.members(i).iter().enumerate() {
            let gi = g_eff[i][s];
            if gi == 0.0 || gt[r] == 0.0 {
                continue;
            }
            rhs[ai] += gi * (fe[i][s] - fbar[r]);
            for jw in layout.win(r) {
                if let Some(bj) = idx.iter().position(|&x| x == jw) {
                    let sj = layout.slot(jw, r).unwrap();
                    a[(ai, bj)] -= gi * p[jw] * g_eff[jw][sj] / gt[r];
                }
            }
        }
    }
    let last = n - 1;
    for (b, &j) in idx.iter().enumerate() {
        a[(last, b)] = p[j];
    }
    rhs[last] = 0.0;
    let sol = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TssError::SingularSystem("reported offset system".into()))?;
    let check = (&a * &sol - &rhs).amax();
    if !check.is_finite() || check > 1e-8 * (1.0 + rhs.amax()) {
        return Err(TssError::SingularSystem(format!("reported offset residual {check:e}")));
    }
    let mut f = vec![0.0; nw];
    for (b, &j) in idx.iter().enumerate() {
        f[j] = sol[b];
    }
    let mut out = vec![None; k];
    for (r, o) in out.iter_mut().enumerate() {
        if gt[r] == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for jw in layout.win(r) {
            let s = layout.slot(jw, r).unwrap();
            if p[jw] > 0.0 && g_eff[jw][s] > 0.0 {
                acc += p[jw] * g_eff[jw][s] * (fe[jw][s] - f[jw]);
            }
        }
        *o = Some(acc / gt[r]);
    }
    Ok(Reported { p, gamma: gt, f, fe: out })
}

/// Everything the sampler and the output need after one global pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEstimates {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub f: Vec<f64>,
    pub fcirc: Vec<Option<f64>>,
    pub weights: SamplingWeights,
}

/// Full visit-control pass: marginals, offsets, F°, π. With `η = 0` the
/// solves are skipped and `π = γ`.
#[allow(clippy::too_many_arguments)]
pub fn visit_control(
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    tilts: &[Vec<f64>],
    visited: &[bool],
    eta: f64,
    eps_pi: f64,
    layout: &WindowLayout,
    opts: OffsetOptions,
    f_prev: Option<&[f64]>,
) -> Result<GlobalEstimates> {
    let mut weights = SamplingWeights::undefined(layout.window_count());
    let (p, q, f, fcirc) = visit_control_into(&mut weights, fe, gamma, tilts, visited, eta, eps_pi, layout, opts, f_prev)?;
    Ok(GlobalEstimates { p, q, f, fcirc, weights })
}

type Solved = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<Option<f64>>);

/// [`visit_control`] updating `weights` in place; returns `(p, q, f, F°)`.
/// On error `weights` is left untouched.
#[allow(clippy::too_many_arguments)]
pub fn visit_control_into(
    weights: &mut SamplingWeights,
    fe: &[Vec<f64>],
    gamma: &[Vec<f64>],
    tilts: &[Vec<f64>],
    visited: &[bool],
    eta: f64,
    eps_pi: f64,
    layout: &WindowLayout,
    opts: OffsetOptions,
    f_prev: Option<&[f64]>,
) -> Result<Solved> {
    let nw = layout.window_count();
    if eta == 0.0 {
        pi_tss_into(weights, fe, &[], gamma, 0.0, eps_pi, visited, layout);
        return Ok((vec![], vec![], vec![0.0; nw], vec![]));
    }
    let p = window_marginals(gamma, tilts, visited, layout)?;
    let q = rung_marginal(&p, gamma, tilts, layout);
    let sol = solve_offsets(fe, gamma, &p, &q, eta, layout, opts, f_prev)?;
    let fcirc = visit_control_fes(fe, gamma, &p, &q, &sol.f, eta, layout);
    pi_tss_into(weights, fe, &fcirc, gamma, eta, eps_pi, visited, layout);
    Ok((p, q, sol.f, fcirc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RungGrid;
    use crate::windows::{build_layout, WindowSpec};

    fn full_double(k: usize) -> WindowLayout {
        build_layout(&RungGrid::linear(k).unwrap(), &WindowSpec::FullDouble).unwrap()
    }

    #[test]
    fn coincident_marginals_are_half() {
        let l = full_double(4);
        let g = vec![vec![0.25; 4]; 2];
        let o = vec![vec![1.0, 0.5, 2.0, 1.0], vec![0.3, 1.0, 1.0, 1.2]];
        let p = window_marginals(&g, &o, &[true, true], &l).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_rung_marginal() {
        let l = full_double(5);
        let g = vec![vec![0.2; 5]; 2];
        let o = vec![vec![1.0; 5]; 2];
        let q = rung_marginal(&[0.5, 0.5], &g, &o, &l);
        assert!(q.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn unvisited_window_gets_zero() {
        let grid = RungGrid::linear(16).unwrap();
        let l = build_layout(&grid, &WindowSpec::Pattern { size: 8, overlap: 4 }).unwrap();
        let g: Vec<Vec<f64>> = (0..5).map(|j| vec![1.0 / l.members(j).len() as f64; l.members(j).len()]).collect();
        let o: Vec<Vec<f64>> = g.iter().map(|r| vec![1.0; r.len()]).collect();
        let vis = [true, false, true, true, false];
        let p = window_marginals(&g, &o, &vis, &l).unwrap();
        assert_eq!(p[1], 0.0);
        assert_eq!(p[4], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(marginal_residual(&g, &o, &vis, &l, &p) < 1e-10);
        assert_eq!(window_marginals(&g, &o, &[false; 5], &l), Err(TssError::NoVisitedWindows));
    }

    #[test]
    fn reducible_visited_set_takes_least_norm() {
        // windows 0 and 2 overlap only through window 1, which is unvisited
        let grid = RungGrid::linear(6).unwrap();
        let members = vec![vec![0, 1, 2, 3, 4, 5], vec![0, 1, 2, 3], vec![4, 5]];
        let l = WindowLayout::new(6, members).unwrap();
        let g = vec![vec![1.0 / 6.0; 6], vec![0.25; 4], vec![0.5; 2]];
        let o: Vec<Vec<f64>> = g.iter().map(|r| vec![1.0; r.len()]).collect();
        let p = window_marginals(&g, &o, &[true, false, true], &l).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let _ = grid;
    }

    #[test]
    fn identical_windows_need_no_offsets() {
        let l = full_double(4);
        let g = vec![vec![0.25; 4]; 2];
        let fe = vec![vec![0.0, 1.0, -0.5, 2.0]; 2];
        let o = vec![vec![1.0; 4]; 2];
        let p = window_marginals(&g, &o, &[true, true], &l).unwrap();
        let q = rung_marginal(&p, &g, &o, &l);
        let s = solve_offsets(&fe, &g, &p, &q, 2.0, &l, OffsetOptions::default(), None).unwrap();
        assert!(s.f.iter().all(|v| v.abs() < 1e-12));
        let fc = visit_control_fes(&fe, &g, &p, &q, &s.f, 2.0, &l);
        let c = fc[0].unwrap() - fe[0][0];
        for k in 0..4 {
            assert!((fc[k].unwrap() - fe[0][k] - c).abs() < 1e-12);
        }
        let r = reported_fes(&fe, &g, &[true, true], &l).unwrap();
        for k in 0..4 {
            assert!((r.fe[k].unwrap() - fe[0][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn pi_closed_form_two_rungs() {
        let l = full_double(2);
        let g = vec![vec![0.5, 0.5]; 2];
        let eta: f64 = 2.0;
        let beta = eta / (eta + 1.0);
        let delta: f64 = 1.3;
        let fe = vec![vec![0.0, delta]; 2];
        // steady-state tilts o_k ∝ exp(F_k/(η+1))
        let o = vec![vec![1.0, (delta / (eta + 1.0)).exp()]; 2];
        let est = visit_control(&fe, &g, &o, &[true, true], eta, 0.0, &l, OffsetOptions::default(), None).unwrap();
        let pi = est.weights.get(0).unwrap().pi();
        let e = (-beta * delta).exp();
        assert!((pi[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((pi[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_gives_gamma() {
        let l = full_double(3);
        let g = vec![vec![0.2, 0.3, 0.5]; 2];
        let fe = vec![vec![0.0, 4.0, 1.0]; 2];
        let o = vec![vec![1.0; 3]; 2];
        let est = visit_control(&fe, &g, &o, &[true, true], 0.0, 0.001, &l, OffsetOptions::default(), None).unwrap();
        assert_eq!(est.weights.get(1).unwrap().pi(), &g[1][..]);
    }

    #[test]
    fn unvisited_rung_takes_the_visit_pressure() {
        let l = full_double(3);
        let g = vec![vec![1.0 / 3.0; 3]; 2];
        let fe = vec![vec![0.0, 1.0, 2.0]; 2];
        let fc = vec![Some(0.0), None, Some(2.0)];
        let w = pi_tss(&fe, &fc, &g, 2.0, 0.001, &[true, true], &l);
        let pi = w.get(0).unwrap().pi();
        assert!(pi[1] > 0.99);
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(pi.iter().zip(&g[0]).all(|(a, b)| a / b >= 0.001 - 1e-15));
    }
}
