//! Small statistics helpers shared by the fitting and reporting paths.

/// Mean of a slice; 0 for empty input.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Nearest-rank percentile (p in [0, 100]) of unsorted data.
///
/// Returns 0 for empty input. p = 0 maps to the minimum, p = 100 to the
/// maximum.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite latency"));
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Pearson correlation coefficient between two equally long series.
///
/// Returns `None` when either series has zero variance (the caller decides
/// how to flag it).
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.is_empty() {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Per-module latency summary used for criticality ranking and priorities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub max: f64,
    pub mean: f64,
    pub p95: f64,
}

impl LatencySummary {
    pub fn from_series(values: &[f64]) -> LatencySummary {
        LatencySummary {
            max: values.iter().cloned().fold(0.0, f64::max),
            mean: mean(values),
            p95: percentile(values, 95.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn percentile_nearest_rank() {
        let data: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_abs_diff_eq!(percentile(&data, 95.0), 95.0);
        assert_abs_diff_eq!(percentile(&data, 99.0), 99.0);
        assert_abs_diff_eq!(percentile(&data, 100.0), 100.0);
        assert_abs_diff_eq!(percentile(&data, 0.0), 1.0);
    }

    #[test]
    fn percentile_single_value() {
        assert_abs_diff_eq!(percentile(&[42.0], 50.0), 42.0);
        assert_abs_diff_eq!(percentile(&[42.0], 99.0), 42.0);
    }

    #[test]
    fn pearson_perfect_correlation() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_zero_variance_is_none() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }
}
