//! Least-squares power-law fits in log-log coordinates.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub quantity: String,
    /// Exponent `b` of `y ≈ a x^b`.
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Fits `ln y = intercept + slope ln x` over the points with `x, y > 0`.
/// Returns `None` with fewer than two usable points.
pub fn loglog_fit(quantity: impl Into<String>, xs: &[f64], ys: &[f64]) -> Option<TrendFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(TrendFit {
        quantity: quantity.into(),
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    })
}
