//! Parameterized distribution families: a rung grid, per-rung dimensionless
//! Hamiltonians `H_k(x)` (with `+inf` allowed for hard walls), and the ways of
//! drawing states at a fixed rung.
//!
//! Rungs are indexed from 0. Ground-truth free energies live on
//! [`AnalyticModel`], never on [`ModelFamily`], so nothing that only sees the
//! family (the sampler and estimators) can read them.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Result, TssError};

pub type EnergyFn = dyn Fn(usize, f64) -> f64 + Send + Sync;
pub type ExactSamplerFn = dyn Fn(usize, &mut dyn RngCore) -> f64 + Send + Sync;
pub type KernelFn = dyn Fn(usize, f64, &mut dyn RngCore) -> f64 + Send + Sync;

#[derive(Debug, Clone, PartialEq)]
pub struct RungGrid {
    lambda: Vec<Vec<f64>>,
    volume: Vec<f64>,
    edges: Vec<(usize, usize)>,
}

impl RungGrid {
    pub fn new(lambda: Vec<Vec<f64>>, volume: Vec<f64>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let k = lambda.len();
        if k < 2 {
            return Err(TssError::Grid(format!("need at least 2 rungs, got {k}")));
        }
        let d = lambda[0].len();
        if d == 0 || lambda.iter().any(|l| l.len() != d) {
            return Err(TssError::Grid("parameter points must share a nonzero dimension".into()));
        }
        if volume.len() != k {
            return Err(TssError::Grid(format!("{} volume entries for {k} rungs", volume.len())));
        }
        if let Some(i) = volume.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(TssError::Grid(format!("volume of rung {i} must be positive")));
        }
        if let Some(e) = edges.iter().find(|(a, b)| *a >= k || *b >= k || a == b) {
            return Err(TssError::Grid(format!("invalid edge {e:?}")));
        }
        let grid = RungGrid { lambda, volume, edges };
        if !grid.is_connected() {
            return Err(TssError::Grid("edge graph is disconnected".into()));
        }
        Ok(grid)
    }

    /// `lambda_k = k` for `k = 0..count`, unit volumes, nearest-neighbour edges.
    pub fn linear(count: usize) -> Result<Self> {
        let lambda = (0..count).map(|k| vec![k as f64]).collect();
        let edges = (1..count).map(|k| (k - 1, k)).collect();
        RungGrid::new(lambda, vec![1.0; count], edges)
    }

    pub fn count(&self) -> usize {
        self.lambda.len()
    }

    pub fn dim(&self) -> usize {
        self.lambda[0].len()
    }

    pub fn lambda(&self, k: usize) -> &[f64] {
        &self.lambda[k]
    }

    pub fn volume(&self, k: usize) -> f64 {
        self.volume[k]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == k {
                Some(b)
            } else if b == k {
                Some(a)
            } else {
                None
            }
        })
    }

    fn is_connected(&self) -> bool {
        let k = self.count();
        let mut seen = vec![false; k];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A family of Hamiltonians over a one-dimensional state space.
#[derive(Clone)]
pub struct ModelFamily {
    name: String,
    grid: RungGrid,
    energy: Arc<EnergyFn>,
    exact_sampler: Option<Arc<ExactSamplerFn>>,
    kernel: Option<Arc<KernelFn>>,
    gamma_override: Option<Vec<f64>>,
    breakpoints: Option<Vec<f64>>,
}

impl fmt::Debug for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelFamily")
            .field("name", &self.name)
            .field("rungs", &self.grid.count())
            .field("exact_sampler", &self.exact_sampler.is_some())
            .field("kernel", &self.kernel.is_some())
            .field("gamma_override", &self.gamma_override)
            .finish()
    }
}

impl ModelFamily {
    /// A family with only an energy function; attach a sampler or kernel before use.
    pub fn new<E>(name: impl Into<String>, grid: RungGrid, energy: E) -> Self
    where
        E: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        ModelFamily {
            name: name.into(),
            grid,
            energy: Arc::new(energy),
            exact_sampler: None,
            kernel: None,
            gamma_override: None,
            breakpoints: None,
        }
    }

    pub fn with_exact_sampler<S>(mut self, s: S) -> Self
    where
        S: Fn(usize, &mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        self.exact_sampler = Some(Arc::new(s));
        self
    }

    pub fn with_kernel<T>(mut self, t: T) -> Self
    where
        T: Fn(usize, f64, &mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        self.kernel = Some(Arc::new(t));
        self
    }

    /// Drop the exact sampler so that state moves go through the kernel.
    pub fn without_exact_sampler(mut self) -> Self {
        self.exact_sampler = None;
        self
    }

    /// Fix the global rung density instead of estimating it.
    pub fn with_gamma_override(mut self, gamma: Vec<f64>) -> Self {
        self.gamma_override = Some(gamma);
        self
    }

    /// Points where the densities may be discontinuous; the first and last
    /// bound the region used for quadrature.
    pub fn with_breakpoints(mut self, b: Vec<f64>) -> Self {
        self.breakpoints = Some(b);
        self
    }

    /// Check that the family can actually be sampled.
    pub fn validate(&self) -> Result<()> {
        if self.exact_sampler.is_none() && self.kernel.is_none() {
            return Err(TssError::Domain(format!(
                "model '{}' has neither an exact sampler nor a kernel",
                self.name
            )));
        }
        if let Some(g) = &self.gamma_override {
            if g.len() != self.grid.count() || g.iter().any(|v| !(*v > 0.0)) {
                return Err(TssError::Domain("gamma override must be positive, one entry per rung".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &RungGrid {
        &self.grid
    }

    pub fn rung_count(&self) -> usize {
        self.grid.count()
    }

    #[inline]
    pub fn energy(&self, k: usize, x: f64) -> f64 {
        (self.energy)(k, x)
    }

    pub fn has_exact_sampler(&self) -> bool {
        self.exact_sampler.is_some()
    }

    pub fn has_kernel(&self) -> bool {
        self.kernel.is_some()
    }

    pub fn sample_exact(&self, k: usize, rng: &mut dyn RngCore) -> Option<f64> {
        self.exact_sampler.as_ref().map(|s| s(k, rng))
    }

    pub fn kernel_step(&self, k: usize, x: f64, rng: &mut dyn RngCore) -> Option<f64> {
        self.kernel.as_ref().map(|t| t(k, x, rng))
    }

    pub fn gamma_override(&self) -> Option<&[f64]> {
        self.gamma_override.as_deref()
    }

    pub fn breakpoints(&self) -> Option<&[f64]> {
        self.breakpoints.as_deref()
    }
}

/// A family together with its exact free energies (test and oracle use only).
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    pub family: ModelFamily,
    exact: Vec<f64>,
}

impl AnalyticModel {
    pub fn exact_free_energy(&self, k: usize) -> f64 {
        self.exact[k]
    }

    pub fn exact_free_energies(&self) -> &[f64] {
        &self.exact
    }
}

/// Two unit-width uniform densities overlapping on `[-delta, delta]`.
pub fn make_uniform_pair(delta: f64) -> Result<AnalyticModel> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(TssError::Domain(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    let lo = [-1.0 + delta, -delta];
    let hi = [delta, 1.0 - delta];
    let grid = RungGrid::linear(2)?;
    let family = ModelFamily::new("uniform_pair", grid, move |k, x| {
        if x >= lo[k] && x <= hi[k] {
            0.0
        } else {
            f64::INFINITY
        }
    })
    .with_exact_sampler(move |k, rng| rng.random_range(lo[k]..hi[k]))
    .with_kernel(move |k, x, rng| {
        let y = x + rng.random_range(-0.25..0.25);
        if y >= lo[k] && y <= hi[k] {
            y
        } else {
            x
        }
    })
    .with_gamma_override(vec![0.5, 0.5])
    .with_breakpoints(vec![-1.0 + delta, -delta, delta, 1.0 - delta]);
    Ok(AnalyticModel { family, exact: vec![0.0, 0.0] })
}

/// `H_k(x) = (x - k)^2 / 2` for `k = 0..=l`.
pub fn make_gaussian_ladder(l: usize) -> Result<AnalyticModel> {
    if l < 1 {
        return Err(TssError::Domain("ladder needs L >= 1".into()));
    }
    let grid = RungGrid::linear(l + 1)?;
    let family = ModelFamily::new("gaussian_ladder", grid, |k, x| {
        let d = x - k as f64;
        0.5 * d * d
    })
    .with_exact_sampler(|k, rng| {
        let z: f64 = rng.sample(StandardNormal);
        k as f64 + z
    })
    .with_kernel(metropolis_kernel(
        |k, x| {
            let d = x - k as f64;
            0.5 * d * d
        },
        2.4,
    ))
    .with_breakpoints(vec![-12.0, l as f64 + 12.0]);
    let f0 = -(2.0 * std::f64::consts::PI).sqrt().ln();
    Ok(AnalyticModel { family, exact: vec![f0; l + 1] })
}

/// Two identical uniform densities on `[0, 1]`.
pub fn make_identical_pair() -> AnalyticModel {
    let grid = RungGrid::linear(2).expect("two-rung grid");
    let family = ModelFamily::new("identical_pair", grid, |_, x| {
        if (0.0..=1.0).contains(&x) {
            0.0
        } else {
            f64::INFINITY
        }
    })
    .with_exact_sampler(|_, rng| rng.random_range(0.0..1.0))
    .with_gamma_override(vec![0.5, 0.5])
    .with_breakpoints(vec![0.0, 1.0]);
    AnalyticModel { family, exact: vec![0.0, 0.0] }
}

/// Random-walk Metropolis step with uniform proposals of half-width `step`,
/// reversible for `exp(-H_k)`.
pub fn metropolis_kernel<E>(energy: E, step: f64) -> impl Fn(usize, f64, &mut dyn RngCore) -> f64 + Send + Sync
where
    E: Fn(usize, f64) -> f64 + Send + Sync,
{
    move |k, x, rng| {
        let y = x + rng.random_range(-step..step);
        let dh = energy(k, y) - energy(k, x);
        if dh <= 0.0 || rng.random::<f64>() < (-dh).exp() {
            y
        } else {
            x
        }
    }
}
