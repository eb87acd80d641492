use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares line through `(ln r, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
}

impl PowerLawFit {
    pub fn predict(&self, r: f64) -> f64 {
        (self.intercept + self.slope * r.ln()).exp()
    }
}

/// Fit `y ≈ C r^p`. Needs at least 5 positive samples over at least two
/// decades of `r`.
pub fn fit_blowup_exponent(r: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if r.len() != y.len() {
        return Err(Error::InvalidParameter(format!("{} radii vs {} values", r.len(), y.len())));
    }
    if r.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter("log-log fit needs positive finite data".into()));
    }
    let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let decades = if r.is_empty() { 0.0 } else { (hi / lo).log10() };
    if r.len() < 5 || decades < 2.0 - 1e-9 {
        return Err(Error::InsufficientSpan {
            samples: r.len(),
            decades,
        });
    }
    let n = r.len() as f64;
    let xs: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
        samples: r.len(),
    })
}
