//! Long-run-risk market: a mean-reverting factor driving affine asset drifts,
//! Euler-Maruyama simulation and the wealth floor.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::rng::Stream;

/// Characteristics of one risky asset.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AssetSpec {
    /// Unconditional expected return (drift at the factor mean).
    pub mean_return: f64,
    /// Total volatility.
    pub volatility: f64,
    /// Correlation of the return shock with the factor shock.
    pub factor_correlation: f64,
    /// Drift sensitivity to factor deviations.
    pub lrr_beta: f64,
}

impl AssetSpec {
    pub const fn new(mean_return: f64, volatility: f64, factor_correlation: f64, lrr_beta: f64) -> Self {
        AssetSpec { mean_return, volatility, factor_correlation, lrr_beta }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct MarketParams {
    pub risk_free_rate: f64,
    /// Mean-reversion speed of the factor (1/year).
    pub factor_reversion: f64,
    /// Long-run factor mean.
    pub factor_mean: f64,
    /// Factor volatility (1/sqrt(year)).
    pub factor_vol: f64,
    /// Investment horizon in years.
    pub horizon: f64,
    pub assets: Vec<AssetSpec>,
    /// Hard lower bound on wealth applied after every step.
    pub wealth_floor: f64,
    /// Upper end of the wealth band used for evaluation grids. Not a cap.
    pub wealth_band_max: f64,
}

/// The five-asset baseline.
pub const BASELINE_ASSETS: [AssetSpec; 5] = [
    AssetSpec::new(0.06, 0.15, 0.60, 0.90),
    AssetSpec::new(0.08, 0.1875, 0.50, 0.9375),
    AssetSpec::new(0.10, 0.225, 0.40, 0.90),
    AssetSpec::new(0.12, 0.2625, 0.30, 0.7875),
    AssetSpec::new(0.14, 0.30, 0.20, 0.60),
];

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams::baseline()
    }
}

impl MarketParams {
    pub fn baseline() -> Self {
        MarketParams {
            risk_free_rate: 0.02,
            factor_reversion: 0.40,
            factor_mean: 0.40,
            factor_vol: 0.10,
            horizon: 1.5,
            assets: BASELINE_ASSETS.to_vec(),
            wealth_floor: 0.1,
            wealth_band_max: 0.7,
        }
    }

    /// One risky asset uncorrelated with (and unaffected by) the factor.
    pub fn single_asset(mean_return: f64, volatility: f64, risk_free_rate: f64, horizon: f64) -> Self {
        MarketParams {
            risk_free_rate,
            factor_reversion: 0.40,
            factor_mean: 0.40,
            factor_vol: 0.10,
            horizon,
            assets: vec![AssetSpec::new(mean_return, volatility, 0.0, 0.0)],
            wealth_floor: 0.01,
            wealth_band_max: 2.0,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.risk_free_rate,
            self.factor_reversion,
            self.factor_mean,
            self.factor_vol,
            self.horizon,
            self.wealth_floor,
            self.wealth_band_max,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "market parameters" });
        }
        if !(self.factor_reversion > 0.0) {
            return Err(invalid("market.factor_reversion", "must be > 0"));
        }
        if !(self.factor_vol > 0.0) {
            return Err(invalid("market.factor_vol", "must be > 0"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("market.horizon", "must be > 0"));
        }
        if self.assets.is_empty() {
            return Err(invalid("market.assets", "at least one risky asset is required"));
        }
        for a in &self.assets {
            if !(a.volatility > 0.0) || !a.volatility.is_finite() {
                return Err(invalid("market.assets.volatility", "must be > 0"));
            }
            if !(a.factor_correlation.abs() < 1.0) {
                return Err(invalid("market.assets.factor_correlation", "must satisfy |rho| < 1"));
            }
            if !a.mean_return.is_finite() || !a.lrr_beta.is_finite() {
                return Err(Error::NonFinite { context: "asset characteristics" });
            }
        }
        if !(self.wealth_floor > 0.0 && self.wealth_floor < self.wealth_band_max) {
            return Err(invalid("market.wealth_floor", "need 0 < wealth_floor < wealth_band_max"));
        }
        Ok(())
    }

    /// Stationary standard deviation of the factor, `xi / sqrt(2 kappa)`.
    pub fn factor_stationary_sd(&self) -> f64 {
        self.factor_vol / math::sqrt(2.0 * self.factor_reversion)
    }
}

/// Instantaneous drift vector `mu_i(Y) = mean_i + beta_i (Y - ybar)`.
pub fn drift_mu(y: f64, p: &MarketParams) -> Vec<f64> {
    p.assets.iter().map(|a| a.mean_return + a.lrr_beta * (y - p.factor_mean)).collect()
}

/// `d x (d+1)` volatility matrix. Column 0 loads on the factor shock; asset
/// `i` has its own idiosyncratic shock in column `i + 1`.
pub fn vol_matrix(p: &MarketParams) -> Result<Matrix> {
    let d = p.n_assets();
    let mut sigma = Matrix::zeros(d, d + 1);
    for (i, a) in p.assets.iter().enumerate() {
        let rho = a.factor_correlation;
        if !(rho.abs() < 1.0) {
            return Err(invalid("market.assets.factor_correlation", "must satisfy |rho| < 1"));
        }
        sigma.set(i, 0, a.volatility * rho);
        sigma.set(i, i + 1, a.volatility * math::sqrt(1.0 - rho * rho));
    }
    Ok(sigma)
}

/// Point in the state space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub wealth: f64,
    pub factor: f64,
}

/// Portfolio weights (fractions of wealth) and a consumption rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    pub weights: Vec<f64>,
    pub consumption: f64,
}

/// Validated market with its derived volatility structure.
#[derive(Clone, Debug)]
pub struct Market {
    params: MarketParams,
    sigma: Matrix,
    covariance: Matrix,
    cov_factor: Matrix,
}

impl Market {
    pub fn new(params: MarketParams) -> Result<Self> {
        params.validate()?;
        let sigma = vol_matrix(&params)?;
        let covariance = linalg::matmul_nt(&sigma, &sigma);
        let cov_factor = linalg::cholesky(&covariance)?;
        Ok(Market { params, sigma, covariance, cov_factor })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn n_assets(&self) -> usize {
        self.params.n_assets()
    }

    /// Volatility matrix `Sigma` (`d x (d+1)`).
    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// `Sigma Sigmaᵀ`.
    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Loadings of the asset returns on the factor shock (column 0 of `Sigma`).
    pub fn factor_loadings(&self) -> Vec<f64> {
        self.sigma.col_values(0)
    }

    /// Excess drift `mu(Y) - r`.
    pub fn excess_drift(&self, y: f64) -> Vec<f64> {
        let r = self.params.risk_free_rate;
        self.params
            .assets
            .iter()
            .map(|a| a.mean_return + a.lrr_beta * (y - self.params.factor_mean) - r)
            .collect()
    }

    /// Solves `(Sigma Sigmaᵀ) x = b`.
    pub fn solve_covariance(&self, b: &[f64]) -> Vec<f64> {
        linalg::cholesky_solve(&self.cov_factor, b)
    }

    /// One Euler-Maruyama step. Returns the next state and whether the
    /// wealth floor bound. `floor` overrides the configured floor (the
    /// no-floor ablation passes a tiny positivity guard instead).
    pub fn step(&self, s: State, u: &Control, db: &[f64], dt: f64, floor: f64) -> Result<(State, bool)> {
        let d = self.n_assets();
        if db.len() != d + 1 {
            return Err(Error::Shape { context: "noise increment", expected: d + 1, found: db.len() });
        }
        if u.weights.len() != d {
            return Err(Error::Shape { context: "portfolio weights", expected: d, found: u.weights.len() });
        }
        if !(s.wealth.is_finite() && s.factor.is_finite() && u.consumption.is_finite())
            || u.weights.iter().chain(db).any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite { context: "euler step input" });
        }
        let p = &self.params;
        let excess = self.excess_drift(s.factor);
        let mut growth = 1.0 + p.risk_free_rate * dt;
        for i in 0..d {
            let shock: f64 = linalg::dot(self.sigma.row(i), db);
            growth += u.weights[i] * (excess[i] * dt + shock);
        }
        let candidate = s.wealth * growth - u.consumption * dt;
        let hit = candidate < floor;
        let wealth = if hit { floor } else { candidate };
        let factor = s.factor + p.factor_reversion * (p.factor_mean - s.factor) * dt + p.factor_vol * db[0];
        Ok((State { t: s.t + dt, wealth, factor }, hit))
    }
}

/// Distribution of initial states.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct InitialStateSampler {
    pub wealth_low: f64,
    pub wealth_high: f64,
    /// Factor draws are stationary-normal truncated at this many sd; 0 pins
    /// the factor at its mean.
    pub factor_truncation_sd: f64,
}

impl Default for InitialStateSampler {
    fn default() -> Self {
        InitialStateSampler { wealth_low: 0.9, wealth_high: 1.1, factor_truncation_sd: 3.0 }
    }
}

impl InitialStateSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.wealth_low > 0.0 && self.wealth_low <= self.wealth_high) {
            return Err(invalid("init.wealth_low", "need 0 < wealth_low <= wealth_high"));
        }
        if !(self.factor_truncation_sd >= 0.0) {
            return Err(invalid("init.factor_truncation_sd", "must be >= 0"));
        }
        Ok(())
    }

    pub fn sample(&self, p: &MarketParams, rng: &mut Stream) -> State {
        let wealth = if self.wealth_high > self.wealth_low {
            rng.uniform_in(self.wealth_low, self.wealth_high)
        } else {
            self.wealth_low
        };
        let factor = if self.factor_truncation_sd > 0.0 {
            p.factor_mean + p.factor_stationary_sd() * rng.truncated_normal(self.factor_truncation_sd)
        } else {
            p.factor_mean
        };
        State { t: 0.0, wealth, factor }
    }
}

/// Analytic mean and variance of the factor at time `t` started from `y0`.
pub fn ou_moments(y0: f64, t: f64, p: &MarketParams) -> (f64, f64) {
    let k = p.factor_reversion;
    let mean = p.factor_mean + (y0 - p.factor_mean) * math::exp(-k * t);
    let var = p.factor_vol * p.factor_vol * (-math::exp_m1(-2.0 * k * t)) / (2.0 * k);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> Market {
        Market::new(MarketParams::baseline()).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = MarketParams::baseline();
        let mu = drift_mu(0.40, &p);
        let want = [0.06, 0.08, 0.10, 0.12, 0.14];
        for (a, b) in mu.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((drift_mu(0.50, &p)[0] - 0.15).abs() < 1e-14);
        let mut flat = p.clone();
        for a in &mut flat.assets {
            a.lrr_beta = 0.0;
        }
        assert_eq!(drift_mu(0.1, &flat), drift_mu(0.9, &flat));
    }

    #[test]
    fn volatility_rows_recover_sigma_and_rho() {
        let m = baseline();
        let s = m.sigma();
        assert!((s.get(0, 0) - 0.09).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.12).abs() < 1e-15);
        for (i, a) in m.params().assets.iter().enumerate() {
            let norm = linalg::norm(s.row(i));
            assert!((norm - a.volatility).abs() < 1e-15);
            assert!((s.get(i, 0) / norm - a.factor_correlation).abs() < 1e-14);
        }
        let mut zero_rho = MarketParams::baseline();
        for a in &mut zero_rho.assets {
            a.factor_correlation = 0.0;
        }
        let z = vol_matrix(&zero_rho).unwrap();
        assert!(z.col_values(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_correlation() {
        let mut p = MarketParams::baseline();
        p.assets[2].factor_correlation = 1.0;
        assert!(Market::new(p).is_err());
    }

    #[test]
    fn euler_step_examples() {
        let m = baseline();
        let u = Control { weights: vec![0.0; 5], consumption: 0.0 };
        let s = State { t: 0.0, wealth: 1.0, factor: 0.4 };
        let (next, hit) = m.step(s, &u, &[0.0; 6], 0.01, 0.1).unwrap();
        assert!((next.wealth - 1.0002).abs() < 1e-15);
        assert_eq!(next.factor, 0.4);
        assert!(!hit);

        let s = State { t: 0.0, wealth: 0.5, factor: 0.5 };
        let (next, _) = m.step(s, &u, &[0.0; 6], 0.01, 0.1).unwrap();
        assert!((next.factor - 0.4996).abs() < 1e-15);

        // consumption pushes the candidate to 0.09, below the 0.1 floor
        let s = State { t: 0.0, wealth: 0.1 / 1.0002, factor: 0.4 };
        let u = Control { weights: vec![0.0; 5], consumption: 1.0 };
        let (next, hit) = m.step(s, &u, &[0.0; 6], 0.01, 0.1).unwrap();
        assert!(hit);
        assert_eq!(next.wealth, 0.1);
    }

    #[test]
    fn step_rejects_non_finite() {
        let m = baseline();
        let u = Control { weights: vec![f64::NAN, 0.0, 0.0, 0.0, 0.0], consumption: 0.0 };
        let s = State { t: 0.0, wealth: 1.0, factor: 0.4 };
        assert!(matches!(m.step(s, &u, &[0.0; 6], 0.01, 0.1), Err(Error::NonFinite { .. })));
    }
}
