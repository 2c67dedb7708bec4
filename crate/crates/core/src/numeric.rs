//! Log-domain helpers shared by the estimators.

/// `log(sum(exp(v)))`, with `-inf` for an empty or all-`-inf` input and `+inf`
/// if any term is `+inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    log_sum_exp_iter(values.iter().copied())
}

pub fn log_sum_exp_iter<I>(values: I) -> f64
where
    I: Iterator<Item = f64> + Clone,
{
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    let s: f64 = values.map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m.is_infinite() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `-H` in a form where `H = +inf` maps to a weight of exactly zero.
#[inline]
pub fn neg_energy(h: f64) -> f64 {
    if h == f64::INFINITY {
        f64::NEG_INFINITY
    } else {
        -h
    }
}

/// Log-weight `log(pi) + F - H` used by the rung move and by importance-ratio
/// denominators. An infinite energy wins over an infinite free energy.
#[inline]
pub fn log_bias_weight(log_pi: f64, f: f64, h: f64) -> f64 {
    if h == f64::INFINITY || log_pi == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_pi + f - h
    }
}
