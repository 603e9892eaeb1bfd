//! Least-squares line fits with confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope; absent with fewer than three points.
    pub slope_ci95: Option<(f64, f64)>,
    pub points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`; `None` for fewer than two distinct x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_ci95 = (n > 2).then(|| {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
        (slope - t * se, slope + t * se)
    });
    Some(LinearFit { slope, intercept, slope_ci95, points: n })
}

/// Fit of `ln y` against `ln x`, skipping nonpositive entries.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).unzip();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_zero_width_interval() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        let (lo, hi) = f.slope_ci95.unwrap();
        assert!(hi - lo < 1e-12);
    }

    #[test]
    fn interval_matches_textbook_value() {
        // y = x + (−1, 1, 1, −1): slope 1, residual variance 4/2, Sxx = 5, t₀.₉₇₅(2) = 4.302653.
        let f = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[0.0, 3.0, 4.0, 3.0]).unwrap();
        let half = 4.302652729911275 * (2.0_f64 / 5.0).sqrt();
        let (lo, hi) = f.slope_ci95.unwrap();
        assert!((hi - lo - 2.0 * half).abs() < 1e-9, "{lo} {hi}");
    }
}
