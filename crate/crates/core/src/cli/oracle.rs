//! Printable oracle values backed by the baseline module.

use std::path::Path;

use crate::baseline::{
    mbar_solve, meanfield_closed, meanfield_pipeline, overlap_matrix, var_mbar_uniform, var_tss_uniform,
    MbarOptions, OverlapMethod,
};
use crate::cli::config::ModelSpec;
use crate::error::{Result, TssError};
use crate::sampler::replica_rng;

pub fn var_tss(delta: f64, nu: u32) -> Result<String> {
    Ok(format!("{:.4}", var_tss_uniform(delta, nu)?))
}

pub fn var_mbar(delta: f64) -> Result<String> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(TssError::Domain("need 0 < delta < 1/2".into()));
    }
    Ok(format!("{:.4}", var_mbar_uniform(delta)))
}

/// Overlap matrix under uniform mixture weights, one row per line.
pub fn overlap(model: &ModelSpec) -> Result<String> {
    let m = model.build()?;
    let k = m.family.rung_count();
    let pi = vec![1.0 / k as f64; k];
    let mut rng = replica_rng(0, 0);
    let o = overlap_matrix(&m.family, m.exact_free_energies(), &pi, OverlapMethod::Quadrature, &mut rng)?;
    Ok((0..k)
        .map(|i| (0..k).map(|j| format!("{:.10}", o.o[(i, j)])).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Parse `rung,H_0,...,H_{K-1}` lines; `#` comments and a non-numeric header are skipped.
pub fn parse_samples(text: &str) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let first = fields.next().unwrap_or_default();
        let Ok(rung) = first.parse::<usize>() else {
            if rows.is_empty() && n == 0 {
                continue;
            }
            return Err(TssError::Config(format!("line {}: bad rung {first:?}", n + 1)));
        };
        let e = fields
            .map(|f| f.parse::<f64>().map_err(|_| TssError::Config(format!("line {}: bad energy {f:?}", n + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((rung, e));
    }
    let k = rows.iter().map(|(r, e)| (*r + 1).max(e.len())).max().unwrap_or(0);
    let mut samples = vec![Vec::new(); k];
    for (r, e) in rows {
        samples[r].push(e);
    }
    Ok(samples)
}

pub fn mbar(samples_file: &Path) -> Result<String> {
    let samples = parse_samples(&std::fs::read_to_string(samples_file)?)?;
    let res = mbar_solve(&samples, MbarOptions::default())?;
    Ok(res.f.iter().enumerate().map(|(k, f)| format!("{k} {f:.10}")).collect::<Vec<_>>().join("\n"))
}

/// `delta,closed,pipeline` per requested Δ.
pub fn meanfield(eta: f64, deltas: &[f64]) -> Result<String> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(TssError::Domain("eta must be >= 0".into()));
    }
    let mut out = vec!["delta,closed,pipeline".to_string()];
    for &d in deltas {
        out.push(format!("{d},{:.12},{:.12}", meanfield_closed(d, eta), meanfield_pipeline(d, eta)?));
    }
    Ok(out.join("\n"))
}

/// `lo:hi:n` → `n` evenly spaced points including both ends.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || TssError::Config(format!("range {s:?} is not lo:hi:n"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n < 2 {
        return Ok(vec![lo]);
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}
