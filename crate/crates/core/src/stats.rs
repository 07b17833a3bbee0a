//! Small distribution helpers shared by the inference code.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Two-sided critical value of the standard normal at level `alpha`.
pub fn normal_critical(alpha: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(1.0 - alpha / 2.0)
}

/// Two-sided p-value of a z statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - n.cdf(z.abs()))).clamp(0.0, 1.0)
}

/// Upper tail probability of a chi-squared variable.
pub fn chi2_sf(stat: f64, df: usize) -> f64 {
    if stat <= 0.0 {
        return 1.0;
    }
    let c = ChiSquared::new(df as f64).expect("df > 0");
    c.sf(stat).clamp(0.0, 1.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Silverman's rule of thumb, 1.0 for degenerate samples.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sd = std_dev(xs);
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let s = 0.9 * spread * n.powf(-0.2);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Gaussian kernel density on an evenly spaced grid. Bandwidth defaults to
/// Silverman's rule; the grid extends four bandwidths past the data range.
pub fn kde(xs: &[f64], bandwidth: Option<f64>, points: usize) -> Vec<(f64, f64)> {
    if xs.is_empty() || points < 2 {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = bandwidth.filter(|b| *b > 0.0).unwrap_or_else(|| silverman_bandwidth(xs));
    let lo = sorted[0] - 4.0 * h;
    let hi = sorted[sorted.len() - 1] + 4.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..points)
        .map(|k| {
            let x = lo + step * k as f64;
            let d: f64 = xs
                .iter()
                .map(|v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum();
            (x, d * norm)
        })
        .collect()
}

/// Trapezoid rule over (x, y) pairs.
pub fn trapezoid(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}
