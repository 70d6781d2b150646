//! CRRA utility and the Epstein-Zin aggregator.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;

/// Tolerance for treating a risk-aversion coefficient as exactly one.
const LOG_UTILITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EzParams {
    /// Relative risk aversion `R`.
    pub risk_aversion: f64,
    /// Elasticity of intertemporal substitution `psi`.
    pub eis: f64,
    /// Time-preference rate.
    pub discount: f64,
    /// Weight on the terminal (bequest) utility.
    pub bequest_weight: f64,
    /// Cap on consumption as a fraction of wealth.
    pub consumption_cap: f64,
    /// Below this `|1/psi - R|` the time-additive limit branch is used.
    pub limit_tol: f64,
}

impl Default for EzParams {
    fn default() -> Self {
        EzParams {
            risk_aversion: 1.5,
            eis: 0.5,
            discount: 0.03,
            bequest_weight: 1.0,
            consumption_cap: 0.25,
            limit_tol: 1e-6,
        }
    }
}

impl EzParams {
    pub fn validate(&self) -> Result<()> {
        let r = self.risk_aversion;
        if !(r > 0.0) || !r.is_finite() {
            return Err(invalid("preferences.risk_aversion", "must be > 0"));
        }
        if (r - 1.0).abs() < LOG_UTILITY_TOL {
            return Err(invalid("preferences.risk_aversion", "R = 1 is not supported by the aggregator"));
        }
        if !(self.eis > 0.0) || !self.eis.is_finite() {
            return Err(invalid("preferences.eis", "must be > 0"));
        }
        if (self.eis - 1.0).abs() < LOG_UTILITY_TOL {
            return Err(invalid("preferences.eis", "psi = 1 is not supported by the aggregator"));
        }
        if !(self.discount > 0.0) || !self.discount.is_finite() {
            return Err(invalid("preferences.discount", "must be > 0"));
        }
        if !(self.bequest_weight >= 0.0) || !self.bequest_weight.is_finite() {
            return Err(invalid("preferences.bequest_weight", "must be >= 0"));
        }
        if !(self.consumption_cap > 0.0 && self.consumption_cap < 1.0) {
            return Err(invalid("preferences.consumption_cap", "must lie in (0, 1)"));
        }
        if !(self.limit_tol >= 0.0) {
            return Err(invalid("preferences.limit_tol", "must be >= 0"));
        }
        Ok(())
    }

    /// `S = 1 / psi`.
    pub fn inverse_eis(&self) -> f64 {
        1.0 / self.eis
    }

    /// `theta = (1 - R) / (1 - S)`.
    pub fn theta(&self) -> f64 {
        (1.0 - self.risk_aversion) / (1.0 - self.inverse_eis())
    }

    /// True when the aggregator uses its time-additive limit branch.
    pub fn is_crra_limit(&self) -> bool {
        (self.inverse_eis() - self.risk_aversion).abs() < self.limit_tol
    }

    /// Same preferences with `psi = 1/R`.
    pub fn crra_limit(&self) -> EzParams {
        EzParams { eis: 1.0 / self.risk_aversion, ..*self }
    }
}

/// `c^(1-R) / (1-R)`, or `ln c` at `R = 1`. Returns `-inf` for `c = 0` when
/// `R >= 1`.
pub fn crra_utility(c: f64, risk_aversion: f64) -> Result<f64> {
    if c < 0.0 || c.is_nan() {
        return Err(invalid("consumption", "must be >= 0"));
    }
    if (risk_aversion - 1.0).abs() < LOG_UTILITY_TOL {
        return Ok(if c == 0.0 { f64::NEG_INFINITY } else { math::ln(c) });
    }
    let e = 1.0 - risk_aversion;
    if c == 0.0 {
        return Ok(if e > 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(math::powf(c, e) / e)
}

/// Inverse of [`crra_utility`] for `R != 1`.
pub fn crra_utility_inverse(u: f64, risk_aversion: f64) -> f64 {
    if (risk_aversion - 1.0).abs() < LOG_UTILITY_TOL {
        return math::exp(u);
    }
    let e = 1.0 - risk_aversion;
    math::powf(e * u, 1.0 / e)
}

fn check_domain(c: f64, v: f64, p: &EzParams) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() || !((1.0 - p.risk_aversion) * v > 0.0) || !v.is_finite() {
        return Err(Error::AggregatorDomain { c, v });
    }
    Ok(())
}

/// Epstein-Zin aggregator `f(c, v)`.
pub fn ez_aggregator(c: f64, v: f64, p: &EzParams) -> Result<f64> {
    check_domain(c, v, p)?;
    let r = p.risk_aversion;
    if p.is_crra_limit() {
        return Ok(p.discount * (math::powf(c, 1.0 - r) / (1.0 - r) - v));
    }
    let s = p.inverse_eis();
    let theta = p.theta();
    let ce = math::powf((1.0 - r) * v, 1.0 / (1.0 - r));
    let ratio = math::powf(c / ce, 1.0 - s);
    Ok(p.discount * theta * v * (ratio - 1.0))
}

/// Marginal aggregator `df/dc`.
pub fn ez_aggregator_dc(c: f64, v: f64, p: &EzParams) -> Result<f64> {
    check_domain(c, v, p)?;
    let r = p.risk_aversion;
    if p.is_crra_limit() {
        return Ok(p.discount * math::powf(c, -r));
    }
    let s = p.inverse_eis();
    let theta = p.theta();
    let base = math::powf((1.0 - r) * v, (s - 1.0) / (1.0 - r));
    Ok(p.discount * theta * (1.0 - s) * v * math::powf(c, -s) * base)
}

/// Partial derivative `df/dv`, used by the value-loss gradient.
pub fn ez_aggregator_dv(c: f64, v: f64, p: &EzParams) -> Result<f64> {
    check_domain(c, v, p)?;
    let r = p.risk_aversion;
    if p.is_crra_limit() {
        return Ok(-p.discount);
    }
    let s = p.inverse_eis();
    let theta = p.theta();
    let ce = math::powf((1.0 - r) * v, 1.0 / (1.0 - r));
    let ratio = math::powf(c / ce, 1.0 - s);
    // d/dv [v (ratio - 1)] with d ratio/dv = -(1-S)/(1-R) ratio / v
    Ok(p.discount * theta * (ratio - 1.0 - (1.0 - s) / (1.0 - r) * ratio))
}

/// Consumption at which the aggregator vanishes, `((1-R) v)^(1/(1-R))`.
pub fn aggregator_zero_consumption(v: f64, p: &EzParams) -> f64 {
    math::powf((1.0 - p.risk_aversion) * v, 1.0 / (1.0 - p.risk_aversion))
}

/// Terminal utility `kappa W^(1-R) / (1-R)`.
pub fn bequest_utility(wealth: f64, p: &EzParams) -> Result<f64> {
    if !(wealth > 0.0) {
        return Err(invalid("wealth", "bequest utility needs W > 0"));
    }
    let e = 1.0 - p.risk_aversion;
    Ok(p.bequest_weight * math::powf(wealth, e) / e)
}

/// Deviations `|f_psi(c, v) - delta (u(c) - v)|` along a sequence of EIS
/// values. The generic branch is forced (`limit_tol = 0`) so the sequence
/// measures the formula itself rather than the branch switch.
pub fn crra_limit_sweep(c: f64, v: f64, base: &EzParams, eis_values: &[f64]) -> Result<Vec<f64>> {
    let limit = EzParams { eis: 1.0 / base.risk_aversion, limit_tol: f64::INFINITY, ..*base };
    let target = ez_aggregator(c, v, &limit)?;
    eis_values
        .iter()
        .map(|&eis| {
            let p = EzParams { eis, limit_tol: 0.0, ..*base };
            let f = if (p.inverse_eis() - p.risk_aversion) == 0.0 { target } else { ez_aggregator(c, v, &p)? };
            Ok((f - target).abs())
        })
        .collect()
}
