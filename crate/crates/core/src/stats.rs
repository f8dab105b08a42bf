//! Small statistics toolkit: binomial intervals, KS distances, fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// z-value of a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Binomial proportion with a Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    pub fn wilson(successes: u64, trials: u64) -> Result<Self> {
        let (lower, upper) = wilson_interval(successes, trials, Z95)?;
        Ok(Self {
            successes,
            trials,
            estimate: successes as f64 / trials as f64,
            lower,
            upper,
        })
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Wilson score interval for `k` successes out of `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::InsufficientData("wilson interval with zero trials".into()));
    }
    if k > n {
        return invalid(format!("successes {k} exceed trials {n}"));
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // Clamp so the interval always contains the point estimate despite rounding.
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0).min(p) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0).max(p) };
    Ok((lo, hi))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("ks statistic needs two nonempty samples".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    if xs.iter().chain(ys.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("ks sample"));
    }
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic p-value of a two-sample KS statistic.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square independence test on a 2×2 table; returns the p-value.
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<f64> {
    let total: u64 = table.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InsufficientData("empty contingency table".into()));
    }
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Ok(1.0);
    }
    let mut stat = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &obs) in row.iter().enumerate() {
            let expected = rows[r] as f64 * cols[c] as f64 / total as f64;
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(1.0 - chi.cdf(stat))
}

/// Ordinary least squares line `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub points: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return invalid("fit_line: x and y lengths differ");
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("fit_line needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("fit_line: all x values equal");
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit { slope, intercept, slope_stderr, points: xs.len() })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return invalid(format!("quantile level {q} outside [0, 1]"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}
