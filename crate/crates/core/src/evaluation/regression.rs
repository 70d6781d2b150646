//! Univariate least squares with bootstrap standard errors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{derive_seed, tag, Stream};

/// Bootstrap replications used for the cross-sectional tables.
pub const BOOTSTRAP_REPLICATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    /// Bootstrap standard error of the slope.
    pub standard_error: f64,
    /// `slope / standard_error`; infinite when the bootstrap has no spread.
    pub t_stat: f64,
    pub r_squared: f64,
    pub observations: usize,
    pub replications: usize,
}

/// `(slope, intercept, r_squared)`, or `None` when `x` has no variance.
fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let (mx, my) = (math::mean(x), math::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 1e-300) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, intercept, r2))
}

/// OLS of `y` on `x` with intercept; the slope's standard error comes from
/// `replications` pairs-bootstrap resamples drawn from a stream derived from
/// `seed`. Resamples without variance in `x` are redrawn.
pub fn regress(x: &[f64], y: &[f64], replications: usize, seed: u64) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::Shape { context: "regression", expected: x.len(), found: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::Degenerate("regression needs at least three observations"));
    }
    let (slope, intercept, r_squared) = ols(x, y).ok_or(Error::Degenerate("regressor has zero variance"))?;
    let n = x.len();
    let mut rng = Stream::new(derive_seed(seed, tag::BOOTSTRAP));
    let mut slopes = Vec::with_capacity(replications);
    let (mut bx, mut by) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
    while slopes.len() < replications {
        for i in 0..n {
            let j = rng.index(n);
            bx[i] = x[j];
            by[i] = y[j];
        }
        if let Some((b, _, _)) = ols(&bx, &by) {
            slopes.push(b);
        }
    }
    let standard_error = if replications > 1 { math::std_dev(&slopes) } else { 0.0 };
    let t_stat = if standard_error > 0.0 {
        slope / standard_error
    } else if slope == 0.0 {
        0.0
    } else {
        slope.signum() * f64::INFINITY
    };
    Ok(RegressionResult { slope, intercept, standard_error, t_stat, r_squared, observations: n, replications })
}
