//! Log-log slope fits over an h-ladder.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::Error;

/// Local slope at the fine end below which a ladder counts as floor-limited.
pub const FLOOR_SLOPE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    /// (h, error) pairs, sorted by decreasing h.
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub interval: (f64, f64),
    /// Residuals of the log-log fit, in ladder order.
    pub residuals: Vec<f64>,
    pub floor_limited: bool,
    pub window: Option<(f64, f64)>,
}

impl SlopeFit {
    pub fn with_window(mut self, lo: f64, hi: f64) -> Self {
        self.window = Some((lo, hi));
        self
    }

    /// True when the slope lies in the window (or no window is set).
    pub fn in_window(&self) -> bool {
        self.window.map_or(true, |(lo, hi)| (lo..=hi).contains(&self.slope))
    }

    pub fn residual_rms(&self) -> f64 {
        (self.residuals.iter().map(|r| r * r).sum::<f64>() / self.residuals.len() as f64).sqrt()
    }
}

/// Least squares on (log h, log err).
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit, Error> {
    if pairs.len() < 4 {
        return Err(Error::Degenerate(format!("a slope fit needs at least 4 points, got {}", pairs.len())));
    }
    if let Some(&(h, e)) = pairs.iter().find(|(h, e)| !(h.is_finite() && *h > 0.0 && e.is_finite() && *e > 0.0)) {
        return Err(Error::Degenerate(format!("non-positive or non-finite pair ({h}, {e})")));
    }
    let mut pairs = pairs.to_vec();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Degenerate("repeated h values".into()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0);
    let t = StudentsT::new(0.0, 1.0, n - 2.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    let half = t * (s2 / sxx).sqrt();
    let k = pairs.len();
    let (h1, e1) = pairs[k - 2];
    let (h0, e0) = pairs[k - 1];
    let floor_limited = (e1 / e0).ln() / (h1 / h0).ln() < FLOOR_SLOPE;
    Ok(SlopeFit {
        pairs,
        slope,
        intercept,
        interval: (slope - half, slope + half),
        residuals,
        floor_limited,
        window: None,
    })
}
