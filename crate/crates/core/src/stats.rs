//! Small sample-statistics helpers shared by the estimators.

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Nearest-rank quantile of `xs` (`q` in `[0, 1]`).
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Drop samples strictly above the `q` quantile. `q >= 1` keeps everything.
pub fn trim_upper(xs: &[f64], q: f64) -> Vec<f64> {
    if q >= 1.0 {
        return xs.to_vec();
    }
    match quantile(xs, q) {
        Some(cut) => xs.iter().copied().filter(|&x| x <= cut).collect(),
        None => Vec::new(),
    }
}

/// Mean after upper trimming.
pub fn trimmed_mean(xs: &[f64], q: f64) -> Option<f64> {
    mean(&trim_upper(xs, q))
}

/// Absolute percent error of `est` against `gt`.
pub fn pct_error(est: f64, gt: f64) -> f64 {
    (est - gt).abs() * 100.0 / gt
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), Some(3.0));
        assert_eq!(quantile(&xs, 1.0), Some(5.0));
        assert_eq!(quantile(&xs, 0.0), Some(1.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn trimming_small_samples_keeps_everything() {
        assert_eq!(trim_upper(&[1.0, 2.0], 0.999).len(), 2);
        let mut xs: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        xs.push(1e9);
        let t = trim_upper(&xs, 0.999);
        assert!(!t.contains(&1e9));
    }

    #[test]
    fn percent_error() {
        assert_eq!(pct_error(90.0, 100.0), 10.0);
        assert_eq!(pct_error(110.0, 100.0), 10.0);
    }
}
