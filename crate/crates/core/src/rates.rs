//! Log-log rate fitting.

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Convergence rate `-slope` over the last `tail` points (all points if
/// fewer are available).
pub fn fitted_rate(x: &[f64], y: &[f64], tail: usize) -> Option<f64> {
    let n = x.len().min(y.len());
    let start = n.saturating_sub(tail);
    loglog_slope(&x[start..n], &y[start..n]).map(|s| -s)
}

pub const RATE_TAIL: usize = 4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (1..8).map(|k| 2f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-0.75)).collect();
        assert!((fitted_rate(&x, &y, 4).unwrap() - 0.75).abs() < 1e-12);
        assert!((loglog_slope(&x, &y).unwrap() + 0.75).abs() < 1e-12);
    }

    #[test]
    fn tail_only() {
        let x = [1.0, 2.0, 4.0, 8.0, 16.0];
        let y = [1.0, 100.0, 1.0 / 4.0, 1.0 / 16.0, 1.0 / 64.0];
        assert!((fitted_rate(&x, &y, 3).unwrap() - 2.0).abs() < 1e-12);
        assert!(fitted_rate(&x[..1], &y[..1], 4).is_none());
    }
}
