//! Comparison estimators and analytic oracles: MBAR, overlap matrices,
//! closed-form asymptotic variances, mean-field drifts and the Lyapunov
//! check, plus the small Markov chains used to validate them.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};

use crate::cli::config::ExperimentConfig;
use crate::error::{Result, TssError};
use crate::global::{visit_control, OffsetOptions};
use crate::models::{AnalyticModel, ModelFamily, RungGrid};
use crate::numeric::{log_sum_exp_iter, neg_energy};
use crate::sampler::{rung_move, ReplicaState, SamplingWeights};
use crate::windows::{build_layout, WindowSpec};

// ---------------------------------------------------------------- MBAR

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbarOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MbarOptions {
    fn default() -> Self {
        MbarOptions { tol: 1e-10, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbarResult {
    pub f: Vec<f64>,
    pub iterations: usize,
}

/// Self-consistent MBAR free energies with `F_0 = 0`.
/// `samples[k]` holds the energy vectors `(H_0(x), …, H_{K-1}(x))` of the
/// states drawn at rung `k`.
pub fn mbar_solve(samples: &[Vec<Vec<f64>>], opts: MbarOptions) -> Result<MbarResult> {
    let kk = samples.len();
    if kk < 2 {
        return Err(TssError::Domain("MBAR needs at least two rungs".into()));
    }
    if let Some(k) = samples.iter().position(|s| s.is_empty()) {
        return Err(TssError::Domain(format!("rung {k} has no samples")));
    }
    if samples.iter().flatten().any(|e| e.len() != kk) {
        return Err(TssError::Domain("every energy vector needs one entry per rung".into()));
    }
    let log_n: Vec<f64> = samples.iter().map(|s| (s.len() as f64).ln()).collect();

    // identical energy vectors contribute identically; pool them
    let mut pooled: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
    for e in samples.iter().flatten() {
        let key: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
        pooled.entry(key).or_insert_with(|| (e.clone(), 0.0)).1 += 1.0;
    }
    let mut rows: Vec<(Vec<f64>, f64)> = pooled.into_values().collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    // connectivity: rungs are linked when some state has finite energy in both
    let mut adj = vec![vec![false; kk]; kk];
    for (e, _) in &rows {
        let fin: Vec<usize> = (0..kk).filter(|&k| e[k].is_finite()).collect();
        for &a in &fin {
            for &b in &fin {
                adj[a][b] = true;
            }
        }
    }
    let mut seen = vec![false; kk];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for v in 0..kk {
            if adj[u][v] && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(TssError::DisconnectedOverlap);
    }

    let mut f = vec![0.0; kk];
    let mut log_den = vec![0.0; rows.len()];
    for it in 1..=opts.max_iter {
        for (i, (e, _)) in rows.iter().enumerate() {
            log_den[i] = log_sum_exp_iter((0..kk).map(|l| {
                let a = neg_energy(e[l]);
                if a == f64::NEG_INFINITY {
                    a
                } else {
                    log_n[l] + f[l] + a
                }
            }));
        }
        let mut next: Vec<f64> = (0..kk)
            .map(|k| {
                -log_sum_exp_iter(rows.iter().enumerate().map(|(i, (e, c))| c.ln() + neg_energy(e[k]) - log_den[i]))
            })
            .collect();
        let g = next[0];
        next.iter_mut().for_each(|v| *v -= g);
        let change = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        f = next;
        if change < opts.tol {
            return Ok(MbarResult { f, iterations: it });
        }
    }
    let residual = f64::NAN;
    Err(TssError::NonConvergence { iterations: opts.max_iter, residual })
}

// ---------------------------------------------------------------- overlap

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub o: DMatrix<f64>,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverlapMethod {
    Quadrature,
    MonteCarlo(usize),
}

fn densities(family: &ModelFamily, f: &[f64], x: f64) -> Vec<f64> {
    (0..family.rung_count())
        .map(|k| {
            let h = family.energy(k, x);
            if h.is_finite() {
                (f[k] - h).exp()
            } else {
                0.0
            }
        })
        .collect()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // start from a few panels so narrow features are not skipped
    let n = 16;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fa, fb, fm) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, lo, hi, fa, fm, fb, whole, tol / n as f64, 40)
        })
        .sum()
}

/// Overlap matrix `O_{ij} = ∫ ρ_i ρ_j / Σ_l π_l ρ_l dx` with `ρ_k = e^{F_k - H_k}`.
/// Needs free energies (exact ones for oracle use, or estimates).
pub fn overlap_matrix(
    family: &ModelFamily,
    f: &[f64],
    pi: &[f64],
    method: OverlapMethod,
    rng: &mut dyn RngCore,
) -> Result<OverlapMatrix> {
    let kk = family.rung_count();
    let mut o = DMatrix::<f64>::zeros(kk, kk);
    match method {
        OverlapMethod::Quadrature => {
            let bp = family
                .breakpoints()
                .ok_or_else(|| TssError::Domain("quadrature needs model breakpoints".into()))?;
            for i in 0..kk {
                for j in i..kk {
                    let integrand = |x: f64| {
                        let r = densities(family, f, x);
                        let mix: f64 = r.iter().zip(pi).map(|(a, b)| a * b).sum();
                        if mix > 0.0 {
                            r[i] * r[j] / mix
                        } else {
                            0.0
                        }
                    };
                    let v: f64 = bp.windows(2).map(|w| integrate(integrand, w[0], w[1], 1e-12)).sum();
                    o[(i, j)] = v;
                    o[(j, i)] = v;
                }
            }
        }
        OverlapMethod::MonteCarlo(n) => {
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = kk - 1;
                for (l, &p) in pi.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        k = l;
                        break;
                    }
                }
                let x = family
                    .sample_exact(k, rng)
                    .ok_or_else(|| TssError::Domain("Monte Carlo overlap needs exact samplers".into()))?;
                let r = densities(family, f, x);
                let mix: f64 = r.iter().zip(pi).map(|(a, b)| a * b).sum();
                for i in 0..kk {
                    for j in 0..kk {
                        o[(i, j)] += r[i] * r[j] / (mix * mix);
                    }
                }
            }
            o /= n as f64;
        }
    }
    Ok(OverlapMatrix { o, pi: pi.to_vec() })
}

/// Moore–Penrose pseudoinverse of a symmetric matrix, dropping eigenvalues
/// below `1e-12` times the largest magnitude.
pub fn pinv_symmetric(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.amax();
    let n = a.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l.abs() > 1e-12 * lmax {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// `Σ_MBAR = (Π - Π O Π)^+ - Π^{-1}` (per unit sample, i.e. `t·Cov`).
///
/// The inner matrix annihilates the all-ones vector exactly; an estimated `O`
/// only does so up to noise, which a plain pseudoinverse would blow up. So
/// the inverse is taken on the complement of that direction:
/// `A^+ = (PAP + uu^T)^{-1} - uu^T`, `u = 1/√n`, `P = I - uu^T`.
pub fn var_mbar(o: &OverlapMatrix) -> DMatrix<f64> {
    let n = o.pi.len();
    let pi = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&o.pi));
    let inner = &pi - &pi * &o.o * &pi;
    let uu = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let proj = DMatrix::<f64>::identity(n, n) - &uu;
    let mut a = &proj * inner * &proj;
    a = (&a + a.transpose()) * 0.5 + &uu;
    let inv = a.clone().try_inverse().unwrap_or_else(|| pinv_symmetric(&a));
    let inv_pi = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, o.pi.iter().map(|p| 1.0 / p)));
    inv - uu - inv_pi
}

/// `(e_j - e_i)^T Σ (e_j - e_i)`.
pub fn difference_variance(sigma: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    sigma[(i, i)] + sigma[(j, j)] - sigma[(i, j)] - sigma[(j, i)]
}

/// Two-state MBAR variance `(1/(π_1 π_2)) (1/O_12 - 1)`.
pub fn var_mbar_two_state(o12: f64, pi: [f64; 2]) -> f64 {
    (1.0 / o12 - 1.0) / (pi[0] * pi[1])
}

/// MBAR difference variance for the uniform pair at equal weights.
pub fn var_mbar_uniform(delta: f64) -> f64 {
    var_mbar_two_state(2.0 * delta, [0.5, 0.5])
}

/// `Σ_TSS^ν = 4 p + 8 p^{ν+1} / (1 - p^ν)` with `p = 1 - 2δ`.
pub fn var_tss_uniform(delta: f64, nu: u32) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) || nu == 0 {
        return Err(TssError::Domain("need 0 < delta < 1/2 and nu >= 1".into()));
    }
    let p = 1.0 - 2.0 * delta;
    Ok(4.0 * p + 8.0 * p.powi(nu as i32 + 1) / (1.0 - p.powi(nu as i32)))
}

/// The SAMS special case: no visit control, no forgetting, one effective
/// window (two coincident ones), one move pair per update.
pub fn sams_mode(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.eta = 0.0;
    cfg.alpha = 0.0;
    cfg.windows = WindowSpec::FullDouble;
    cfg.nu = 1;
    cfg
}

// ---------------------------------------------------------------- mean field

/// Closed-form visit-control drift for two equal-weight rungs,
/// `g(Δ) = -2 sinh(Δ/2) cosh(βΔ/2) / cosh((1-β)Δ/2)`, `β = η/(η+1)`.
pub fn meanfield_closed(delta: f64, eta: f64) -> f64 {
    let beta = eta / (eta + 1.0);
    -2.0 * (delta / 2.0).sinh() * (beta * delta / 2.0).cosh() / ((1.0 - beta) * delta / 2.0).cosh() + 0.0
}

/// Drift `(1 - e^Δ)/(π_1 + π_2 e^Δ)` of the free-energy difference under `π`.
pub fn meanfield_drift(delta: f64, pi: [f64; 2]) -> f64 {
    (1.0 - delta.exp()) / (pi[0] + pi[1] * delta.exp())
}

/// The same drift with π produced by the visit-control pipeline on two
/// coincident windows at steady-state tilts `o_k ∝ e^{F_k/(η+1)}`.
pub fn meanfield_pipeline(delta: f64, eta: f64) -> Result<f64> {
    let layout = build_layout(&RungGrid::linear(2)?, &WindowSpec::FullDouble)?;
    let gamma = vec![vec![0.5, 0.5]; 2];
    let fe = vec![vec![0.0, delta]; 2];
    // o_k ∝ exp(F_k/(η+1)), scaled so the larger tilt is 1
    let lo = [0.0, delta / (eta + 1.0)];
    let m = lo[0].max(lo[1]);
    let tilts = vec![vec![(lo[0] - m).exp(), (lo[1] - m).exp()]; 2];
    let est = visit_control(&fe, &gamma, &tilts, &[true, true], eta, 0.0, &layout, OffsetOptions::default(), None)?;
    let pi = est.weights.get(0).expect("visited").pi();
    Ok(meanfield_drift(delta, [pi[0], pi[1]]))
}

/// Right-hand side of `Ż_k = (Σγ x^{-η/(η+1)} / Σγ x^{1/(η+1)}) Z*_k - Z_k`, `x = Z*/Z`.
pub fn z_rhs(z: &[f64], zstar: &[f64], gamma: &[f64], eta: f64) -> Vec<f64> {
    let s = visit_scale(z, zstar, gamma, eta);
    z.iter().zip(zstar).map(|(zk, zs)| s * zs - zk).collect()
}

fn visit_scale(z: &[f64], zstar: &[f64], gamma: &[f64], eta: f64) -> f64 {
    let b = 1.0 / (eta + 1.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..z.len() {
        let x = zstar[k] / z[k];
        num += gamma[k] * x.powf(-eta * b);
        den += gamma[k] * x.powf(b);
    }
    num / den
}

/// `dV_γ/dt` along the visit-control mean field at `Z`.
pub fn lyapunov_rate(z: &[f64], zstar: &[f64], gamma: &[f64], eta: f64) -> f64 {
    let s = visit_scale(z, zstar, gamma, eta);
    let x: Vec<f64> = z.iter().zip(zstar).map(|(a, b)| b / a).collect();
    let gx: f64 = gamma.iter().zip(&x).map(|(g, v)| g * v).sum();
    -(0..z.len()).map(|k| gamma[k] * (x[k] / gx - 1.0) * (s * x[k] - 1.0)).sum::<f64>()
}

/// Classical fourth-order Runge–Kutta; returns the state after every step.
pub fn rk4<F>(rhs: F, y0: &[f64], h: f64, steps: usize) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(y.clone());
    let add = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> { (0..n).map(|i| a[i] + c * b[i]).collect() };
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&add(&y, &k1, 0.5 * h));
        let k3 = rhs(&add(&y, &k2, 0.5 * h));
        let k4 = rhs(&add(&y, &k3, h));
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(y.clone());
    }
    out
}

// ---------------------------------------------------------------- small chains

/// Transition matrix of `Y = G(X; Δ)` over the states (-2, 0, 2) for the
/// uniform pair at equal weights and `Δ = Δ*`, one rung move plus one draw.
pub fn three_state_matrix(delta: f64) -> [[f64; 3]; 3] {
    let p = 1.0 - 2.0 * delta;
    let d = 2.0 * delta;
    [[p, d, 0.0], [p / 2.0, d, p / 2.0], [0.0, d, p]]
}

/// `Var(Y) + 2 Σ_{t≥1} Cov(Y^0, Y^{νt})` for that chain.
pub fn three_state_integrated_covariance(delta: f64, nu: u32) -> f64 {
    let p = 1.0 - 2.0 * delta;
    4.0 * p + 8.0 * p * p.powi(nu as i32) / (1.0 - p.powi(nu as i32))
}

/// Simulate the three-state chain, keeping every `nu`-th value.
pub fn simulate_three_state(delta: f64, nu: u32, n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let m = three_state_matrix(delta);
    let vals = [-2.0, 0.0, 2.0];
    let p = 1.0 - 2.0 * delta;
    let stat = [p / 2.0, 2.0 * delta, p / 2.0];
    let pick = |row: &[f64; 3], u: f64| -> usize {
        if u < row[0] {
            0
        } else if u < row[0] + row[1] {
            1
        } else {
            2
        }
    };
    let mut s = pick(&stat, rng.random());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..nu {
            s = pick(&m[s], rng.random());
        }
        out.push(vals[s]);
    }
    out
}

/// Counting recursion `ΔF ← ΔF + 2/(t+1) (2·1{K=first} - 1)` on the identical
/// pair, with each rung drawn by the simulated-tempering rung move at the
/// current estimate.
pub fn counting_estimator(model: &AnalyticModel, steps: u64, rng: &mut dyn RngCore) -> Result<f64> {
    let family = &model.family;
    let layout = build_layout(family.grid(), &WindowSpec::FullDouble)?;
    let gamma = vec![vec![0.5, 0.5]; 2];
    let mut d = 0.0;
    let mut s = ReplicaState { x: family.sample_exact(0, rng).unwrap_or(0.5), k: 0, j: 0 };
    let mut scratch = Vec::new();
    for t in 0..steps {
        let w = SamplingWeights::frozen(&layout, &gamma, &[0.0, d]);
        s = rung_move(s, &w, &layout, family, rng, &mut scratch)?;
        let ind = if s.k == 0 { 1.0 } else { -1.0 };
        d += 2.0 / (t as f64 + 1.0) * ind;
        if let Some(x) = family.sample_exact(s.k, rng) {
            s.x = x;
        }
    }
    Ok(d)
}
