//! Sample statistics: moments, quantiles, rank correlation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Distributional summary of terminal wealth.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WealthStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n-1) p`). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, unbiased sd, adjusted skewness and excess kurtosis and the 5/50/95%
/// quantiles. Higher moments are 0 for samples without spread or with too
/// few points for the adjusted estimators.
pub fn terminal_wealth_stats(values: &[f64]) -> Result<WealthStats> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Degenerate("terminal wealth statistics of an empty sample"));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { context: "terminal wealth sample" });
    }
    let mean = math::mean(values);
    let nf = n as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let sd = if n > 1 { math::sqrt(m2 / (nf - 1.0)) } else { 0.0 };
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let spread = m2 > 1e-300 * (1.0 + mean * mean);
    let skewness = if n > 2 && spread {
        let g1 = m3 / math::powf(m2, 1.5);
        g1 * math::sqrt(nf * (nf - 1.0)) / (nf - 2.0)
    } else {
        0.0
    };
    let excess_kurtosis = if n > 3 && spread {
        let g2 = m4 / (m2 * m2) - 3.0;
        (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 + 6.0)
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(WealthStats {
        count: n,
        mean,
        sd,
        skewness,
        excess_kurtosis,
        q05: quantile_sorted(&sorted, 0.05),
        q50: quantile_sorted(&sorted, 0.50),
        q95: quantile_sorted(&sorted, 0.95),
    })
}

/// Mean and sample standard deviation of a set of per-seed results.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> MeanSd {
        MeanSd { mean: math::mean(xs), sd: math::std_dev(xs), count: xs.len() }
    }
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape { context: "correlation", expected: x.len(), found: y.len() });
    }
    let (mx, my) = (math::mean(x), math::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation with a constant sample"));
    }
    Ok(sxy / math::sqrt(sxx * syy))
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    correlation(&ranks(x), &ranks(y))
}
