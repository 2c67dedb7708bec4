//! Target rung densities γ: the Fisher-information metric estimated from
//! on-the-fly averages of `∇_λ H` and `∇_λ H ∇_λ H^T`, or a fixed override.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TssError};
use crate::estimator::WindowEstimate;
use crate::models::{ModelFamily, RungGrid};
use crate::windows::WindowLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Fisher,
    Fixed(Vec<f64>),
    FlatHalvedEnds,
}

/// Number of Ψ observables per rung for a `d`-dimensional grid.
pub fn observable_count(d: usize) -> usize {
    d + d * d
}

fn axis_neighbors(grid: &RungGrid, k: usize, axis: usize) -> (Option<usize>, Option<usize>) {
    let lk = grid.lambda(k);
    let (mut lo, mut hi) = (None, None);
    for n in grid.neighbors(k) {
        let ln = grid.lambda(n);
        let same_elsewhere = (0..lk.len()).all(|i| i == axis || ln[i] == lk[i]);
        if !same_elsewhere {
            continue;
        }
        if ln[axis] > lk[axis] {
            hi = Some(n);
        } else if ln[axis] < lk[axis] {
            lo = Some(n);
        }
    }
    (lo, hi)
}

/// Finite-difference `∂H/∂λ` at rung `k` along grid edges: central where
/// both neighbours exist, one-sided otherwise. Components are NaN where a
/// needed energy is infinite or no neighbour exists along that axis.
pub fn grad_lambda(family: &ModelFamily, k: usize, x: f64) -> Vec<f64> {
    let grid = family.grid();
    (0..grid.dim())
        .map(|axis| {
            let (lo, hi) = axis_neighbors(grid, k, axis);
            let (a, b) = match (lo, hi) {
                (Some(a), Some(b)) => (a, b),
                (None, Some(b)) => (k, b),
                (Some(a), None) => (a, k),
                (None, None) => return f64::NAN,
            };
            let (ha, hb) = (family.energy(a, x), family.energy(b, x));
            if !ha.is_finite() || !hb.is_finite() {
                return f64::NAN;
            }
            (hb - ha) / (grid.lambda(b)[axis] - grid.lambda(a)[axis])
        })
        .collect()
}

/// Ψ observables for every rung of a window at state `x`: per rung, the
/// gradient followed by its outer product (row-major).
pub fn psi_observables(family: &ModelFamily, layout: &WindowLayout, window: usize, x: f64) -> Vec<f64> {
    let d = family.grid().dim();
    let m = observable_count(d);
    let members = layout.members(window);
    let mut out = Vec::with_capacity(members.len() * m);
    for &k in members {
        let g = grad_lambda(family, k, x);
        out.extend_from_slice(&g);
        for a in 0..d {
            for b in 0..d {
                out.push(g[a] * g[b]);
            }
        }
    }
    out
}

/// Per window and slot, `det(G)^{1/2}` with `G = E[∇H∇H^T] - E[∇H]E[∇H]^T`;
/// `None` where the averages are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEstimate {
    pub sqrt_det: Vec<Vec<Option<f64>>>,
}

pub fn metric_from_psi(psi: &[Option<f64>], d: usize) -> Option<f64> {
    if psi.iter().any(|p| p.is_none_or(|v| !v.is_finite())) {
        return None;
    }
    let v: Vec<f64> = psi.iter().map(|p| p.unwrap()).collect();
    let (mean, second) = v.split_at(d);
    if d == 1 {
        // negative variance estimates are clamped before the square root
        return Some((second[0] - mean[0] * mean[0]).max(0.0).sqrt());
    }
    let g = DMatrix::from_fn(d, d, |a, b| {
        let s = 0.5 * (second[a * d + b] + second[b * d + a]);
        s - mean[a] * mean[b]
    });
    Some(g.determinant().max(0.0).sqrt())
}

pub fn metric_estimate(estimates: &[WindowEstimate], d: usize) -> MetricEstimate {
    let m = observable_count(d);
    let sqrt_det = estimates
        .iter()
        .map(|e| {
            if !e.is_defined() {
                return vec![None; e.fe.len()];
            }
            e.psi.chunks(m).map(|c| metric_from_psi(c, d)).collect()
        })
        .collect();
    MetricEstimate { sqrt_det }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// `γ_{j;k} ∝ [(1-ε) det(G_{j;k})^{1/2} + ε B] vol(λ_k)` per window, with `B`
/// the maximum over all windows and rungs. A window with no estimates gets
/// `γ ∝ vol`; undefined metrics inside a window count as zero.
pub fn gamma_regularized(
    metric: &MetricEstimate,
    layout: &WindowLayout,
    grid: &RungGrid,
    eps_gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    let b = metric
        .sqrt_det
        .iter()
        .flatten()
        .filter_map(|v| *v)
        .fold(0.0f64, f64::max);
    (0..layout.window_count())
        .map(|j| {
            let members = layout.members(j);
            let row = &metric.sqrt_det[j];
            if row.iter().all(|v| v.is_none()) {
                return Ok(normalized(members.iter().map(|&k| grid.volume(k)).collect()));
            }
            let w: Vec<f64> = members
                .iter()
                .zip(row)
                .map(|(&k, s)| ((1.0 - eps_gamma) * s.unwrap_or(0.0) + eps_gamma * b) * grid.volume(k))
                .collect();
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                if eps_gamma > 0.0 {
                    // B = 0: the regularizer alone survives, leaving γ ∝ vol
                    return Ok(normalized(members.iter().map(|&k| grid.volume(k)).collect()));
                }
                return Err(TssError::DegenerateDensity);
            }
            Ok(normalized(w))
        })
        .collect()
}

/// Restrict a global density over all rungs to each window and renormalize.
pub fn gamma_from_global(global: &[f64], layout: &WindowLayout) -> Vec<Vec<f64>> {
    (0..layout.window_count())
        .map(|j| normalized(layout.members(j).iter().map(|&k| global[k]).collect()))
        .collect()
}

/// Flat over interior rungs with the two ends halved: `1/(K-1)` and `1/(2(K-1))`.
pub fn flat_halved_ends(k: usize) -> Vec<f64> {
    let inner = 1.0 / (k as f64 - 1.0);
    (0..k).map(|i| if i == 0 || i == k - 1 { 0.5 * inner } else { inner }).collect()
}

/// The fixed global density of a mode, if it has one (a model-level
/// override takes the place of the Fisher metric).
pub fn fixed_global_gamma(mode: &GammaMode, family: &ModelFamily) -> Result<Option<Vec<f64>>> {
    let k = family.rung_count();
    match mode {
        GammaMode::Fisher => Ok(family.gamma_override().map(|g| g.to_vec())),
        GammaMode::FlatHalvedEnds => Ok(Some(flat_halved_ends(k))),
        GammaMode::Fixed(g) => {
            if g.len() != k || g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(TssError::Config(format!("fixed gamma needs {k} positive entries")));
            }
            Ok(Some(g.clone()))
        }
    }
}
