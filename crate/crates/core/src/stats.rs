//! Small numeric helpers shared across modules.

/// Empirical quantile with linear interpolation of order statistics
/// (type-7 convention: index = (n-1) * tau on the sorted sample).
///
/// `sorted` must be ascending and nonempty.
pub fn empirical_quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * tau.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Sorts a copy and takes the type-7 quantile.
pub fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    empirical_quantile_sorted(&v, tau)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
