//! Normality test and weighted line fit used by the convergence checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    /// A² against the normal law with estimated mean and variance
    pub statistic: f64,
    /// A²(1 + 0.75/n + 2.25/n²)
    pub adjusted: f64,
    pub p_value: f64,
}

/// Anderson–Darling test of normality with mean and variance estimated from
/// the sample; p-value from Stephens' approximation for that case.
pub fn anderson_darling(samples: &[f64]) -> Option<AndersonDarling> {
    let n = samples.len();
    if n < 8 {
        return None;
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return None;
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let std = Normal::standard();
    // log Φ(z) and log(1 − Φ(z)) without cancellation in the tails
    let log_cdf = |x: f64| std.cdf(x).ln();
    let log_sf = |x: f64| std.cdf(-x).ln();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (log_cdf(z[i]) + log_sf(z[n - 1 - i])))
        .sum();
    let statistic = -nf - s / nf;
    let adjusted = statistic * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let a = adjusted;
    let p_value = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Some(AndersonDarling {
        statistic,
        adjusted,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

/// Sample skewness m₃/m₂^{3/2}.
pub fn skewness(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// standard error of the slope from the weights taken as inverse variances
    pub slope_se: f64,
}

/// Weighted least squares fit of y = intercept + slope·x.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LineFit> {
    if x.len() < 2 || x.len() != y.len() || x.len() != w.len() {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        slope_se: (1.0 / sxx).sqrt(),
    })
}
