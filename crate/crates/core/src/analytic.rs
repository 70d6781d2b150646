//! Closed-form Merton benchmark and the myopic multi-asset policy.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::market::Market;
use crate::math;
use crate::preferences::crra_utility;
use crate::projection::{PortfolioConstraint, PortfolioMode};

/// Single risky asset with CRRA utility, discounted running utility and a
/// weighted terminal utility.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MertonParams {
    pub mu: f64,
    pub sigma: f64,
    pub rate: f64,
    pub risk_aversion: f64,
    pub discount: f64,
    pub bequest_weight: f64,
    pub horizon: f64,
}

impl MertonParams {
    /// Validation parameters. The bequest weight `1/delta` makes this the
    /// time-additive image of the recursive problem with unit bequest weight.
    pub fn validation() -> Self {
        MertonParams {
            mu: 0.10,
            sigma: 0.20,
            rate: 0.02,
            risk_aversion: 1.5,
            discount: 0.03,
            bequest_weight: 1.0 / 0.03,
            horizon: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(invalid("merton.sigma", "must be > 0"));
        }
        if !(self.risk_aversion > 0.0) {
            return Err(invalid("merton.risk_aversion", "must be > 0"));
        }
        if !(self.horizon > 0.0) {
            return Err(invalid("merton.horizon", "must be > 0"));
        }
        if !(self.bequest_weight > 0.0) {
            return Err(invalid("merton.bequest_weight", "must be > 0"));
        }
        Ok(())
    }

    /// Squared Sharpe ratio.
    pub fn sharpe_sq(&self) -> f64 {
        let s = (self.mu - self.rate) / self.sigma;
        s * s
    }
}

/// Optimal risky fraction `(mu - r) / (R sigma^2)`.
pub fn merton_weight(p: &MertonParams) -> f64 {
    (p.mu - p.rate) / (p.risk_aversion * p.sigma * p.sigma)
}

/// `nu = [delta - (1-R)(r + S^2/(2R))] / R` for squared Sharpe ratio `S^2`.
pub fn merton_nu(rate: f64, sharpe_sq: f64, risk_aversion: f64, discount: f64) -> f64 {
    let r = risk_aversion;
    (discount - (1.0 - r) * (rate + sharpe_sq / (2.0 * r))) / r
}

/// Wealth-to-consumption ratio `g(t)`, solving `g' = nu g - 1`,
/// `g(T) = kappa^(1/R)`.
pub fn annuity_ratio(t: f64, nu: f64, kappa: f64, risk_aversion: f64, horizon: f64) -> f64 {
    let tau = horizon - t;
    let terminal = math::powf(kappa, 1.0 / risk_aversion);
    if nu.abs() < 1e-12 {
        return terminal + tau;
    }
    1.0 / nu + (terminal - 1.0 / nu) * math::exp(-nu * tau)
}

fn nu_of(p: &MertonParams) -> f64 {
    merton_nu(p.rate, p.sharpe_sq(), p.risk_aversion, p.discount)
}

/// Optimal consumption-to-wealth ratio at time `t`.
pub fn merton_consumption_fraction(t: f64, p: &MertonParams) -> f64 {
    1.0 / annuity_ratio(t, nu_of(p), p.bequest_weight, p.risk_aversion, p.horizon)
}

/// `V(t, W) = e^{-delta t} g(t)^R W^{1-R} / (1-R)`.
pub fn merton_value(t: f64, wealth: f64, p: &MertonParams) -> Result<f64> {
    if !(wealth > 0.0) {
        return Err(invalid("wealth", "must be > 0"));
    }
    let g = annuity_ratio(t, nu_of(p), p.bequest_weight, p.risk_aversion, p.horizon);
    let e = 1.0 - p.risk_aversion;
    Ok(math::exp(-p.discount * t) * math::powf(g, p.risk_aversion) * math::powf(wealth, e) / e)
}

/// HJB generator `L^u V` of the discounted problem at `(t, W)` for a dollar
/// risky position `amount` and consumption `c`, given `V_t, V_W, V_WW`.
pub fn hjb_generator(
    t: f64,
    wealth: f64,
    amount: f64,
    c: f64,
    v_t: f64,
    v_w: f64,
    v_ww: f64,
    p: &MertonParams,
) -> Result<f64> {
    let drift = p.rate * wealth + amount * (p.mu - p.rate) - c;
    let u = crra_utility(c, p.risk_aversion)?;
    Ok(v_t + drift * v_w + 0.5 * amount * amount * p.sigma * p.sigma * v_ww + math::exp(-p.discount * t) * u)
}

/// Transcription guard: evaluates the HJB generator of the closed-form value
/// and policy with finite-difference derivatives at a few points and checks
/// first-order optimality of the policy. Returns the largest relative
/// residual; errors when it exceeds `tol`.
pub fn merton_guard(p: &MertonParams, tol: f64) -> Result<f64> {
    p.validate()?;
    let phi = merton_weight(p);
    let mut worst: f64 = 0.0;
    for &t in &[0.0, 0.37 * p.horizon, 0.81 * p.horizon] {
        for &w in &[0.3, 1.0, 1.7] {
            let v = |t: f64, w: f64| merton_value(t, w, p);
            let ht = 1e-4 * p.horizon;
            let hw = 1e-4 * w;
            let v_t = (v(t + ht, w)? - v((t - ht).max(0.0), w)?) / (t + ht - (t - ht).max(0.0));
            let v_w = (v(t, w + hw)? - v(t, w - hw)?) / (2.0 * hw);
            let v_ww = (v(t, w + hw)? - 2.0 * v(t, w)? + v(t, w - hw)?) / (hw * hw);
            let c = merton_consumption_fraction(t, p) * w;
            let amount = phi * w;
            let residual = hjb_generator(t, w, amount, c, v_t, v_w, v_ww, p)?;
            let scale = (math::exp(-p.discount * t) * crra_utility(c, p.risk_aversion)?).abs();
            // first-order conditions: d/d(amount) and d/dc of the generator
            let foc_pi = (p.mu - p.rate) * v_w + amount * p.sigma * p.sigma * v_ww;
            let foc_c = math::exp(-p.discount * t) * math::powf(c, -p.risk_aversion) - v_w;
            let rel = (residual.abs() / scale)
                .max(foc_pi.abs() / ((p.mu - p.rate) * v_w).abs().max(1e-300))
                .max(foc_c.abs() / v_w.abs());
            worst = worst.max(rel);
        }
    }
    if !(worst <= tol) {
        return Err(Error::InvalidParameter {
            field: "merton",
            reason: alloc::format!("closed form fails the HJB check (relative residual {worst:.3e})"),
        });
    }
    Ok(worst)
}

/// Largest support size handled by [`MeanVarianceSolver`] (it enumerates
/// all `2^d` supports).
pub const MAX_MYOPIC_ASSETS: usize = 12;

#[derive(Clone)]
struct SupportSystem {
    idx: Vec<usize>,
    /// Row-major inverse of the covariance restricted to `idx`.
    inv: Vec<f64>,
    inv_ones: Vec<f64>,
    ones_inv_ones: f64,
}

/// Exact maximizer of the one-period mean-variance objective
/// `piᵀ e - (R/2) piᵀ C pi` over the portfolio set. The optimum is the
/// stationary point of its own support (with the budget either active or
/// not), so the best feasible stationary point over all supports is the
/// argmax. Covariance blocks are inverted once at construction.
#[derive(Clone)]
pub struct MeanVarianceSolver {
    d: usize,
    risk_aversion: f64,
    cons: PortfolioConstraint,
    cov: Matrix,
    supports: Vec<SupportSystem>,
}

impl core::fmt::Debug for MeanVarianceSolver {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("MeanVarianceSolver").field("d", &self.d).field("cons", &self.cons).finish()
    }
}

impl MeanVarianceSolver {
    pub fn new(market: &Market, risk_aversion: f64, cons: &PortfolioConstraint) -> Result<Self> {
        let d = market.n_assets();
        if d > MAX_MYOPIC_ASSETS {
            return Err(invalid(
                "market.assets",
                alloc::format!("the myopic benchmark supports at most {MAX_MYOPIC_ASSETS} assets"),
            ));
        }
        if !(risk_aversion > 0.0) {
            return Err(invalid("preferences.risk_aversion", "must be > 0"));
        }
        let cov = market.covariance().clone();
        let mut supports = Vec::with_capacity((1 << d) - 1);
        for mask in 1u32..(1 << d) {
            let idx: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
            let k = idx.len();
            let block = Matrix::from_fn(k, k, |a, b| cov.get(idx[a], idx[b]));
            let l = linalg::cholesky(&block)?;
            let mut inv = alloc::vec![0.0; k * k];
            for j in 0..k {
                let mut unit = alloc::vec![0.0; k];
                unit[j] = 1.0;
                for (i, x) in linalg::cholesky_solve(&l, &unit).into_iter().enumerate() {
                    inv[i * k + j] = x;
                }
            }
            let inv_ones: Vec<f64> = (0..k).map(|i| inv[i * k..(i + 1) * k].iter().sum()).collect();
            let ones_inv_ones = inv_ones.iter().sum();
            supports.push(SupportSystem { idx, inv, inv_ones, ones_inv_ones });
        }
        Ok(MeanVarianceSolver { d, risk_aversion, cons: *cons, cov, supports })
    }

    pub fn objective(&self, excess: &[f64], pi: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.d {
            quad += pi[i] * linalg::dot(self.cov.row(i), pi);
        }
        linalg::dot(excess, pi) - 0.5 * self.risk_aversion * quad
    }

    pub fn solve(&self, excess: &[f64]) -> Vec<f64> {
        let d = self.d;
        let r = self.risk_aversion;
        let capped = self.cons.mode == PortfolioMode::CappedSimplex;
        let mut best = alloc::vec![0.0; d];
        let mut best_obj = if capped { 0.0 } else { f64::NEG_INFINITY };
        let consider = |s: &SupportSystem, w: &[f64], best: &mut Vec<f64>, best_obj: &mut f64| {
            if w.iter().any(|&x| x < -NEG_TOL) {
                return;
            }
            let mut pi = alloc::vec![0.0; d];
            for (&i, &x) in s.idx.iter().zip(w) {
                pi[i] = x.max(0.0);
            }
            let obj = self.objective(excess, &pi);
            if obj > *best_obj {
                *best_obj = obj;
                *best = pi;
            }
        };
        for s in &self.supports {
            let k = s.idx.len();
            let x: Vec<f64> =
                (0..k).map(|i| (0..k).map(|j| s.inv[i * k + j] * excess[s.idx[j]]).sum::<f64>() / r).collect();
            let sum_x: f64 = x.iter().sum();
            let budget = if capped { self.cons.leverage_cap } else { self.cons.budget };
            if capped && sum_x <= budget {
                consider(s, &x, &mut best, &mut best_obj);
            }
            // Budget active: pi = x - (lambda / R) C^{-1} 1 with 1ᵀ pi = budget.
            let shift = (sum_x - budget) / s.ones_inv_ones;
            if capped && shift < 0.0 {
                continue;
            }
            let w: Vec<f64> = x.iter().zip(&s.inv_ones).map(|(a, b)| a - shift * b).collect();
            consider(s, &w, &mut best, &mut best_obj);
        }
        best
    }
}

/// Components below this are treated as zero rather than infeasible.
const NEG_TOL: f64 = 1e-12;

/// Myopic portfolio: the maximizer of `piᵀ (mu(Y) - r) - (R/2) piᵀ Sigma
/// Sigmaᵀ pi` over the portfolio set. Builds a solver per call; use
/// [`MeanVarianceSolver`] for repeated evaluation.
pub fn myopic_weights(factor: f64, market: &Market, risk_aversion: f64, cons: &PortfolioConstraint) -> Vec<f64> {
    MeanVarianceSolver::new(market, risk_aversion, cons)
        .expect("market covariance is positive definite")
        .solve(&market.excess_drift(factor))
}

/// Unprojected myopic portfolio.
pub fn myopic_weights_unconstrained(factor: f64, market: &Market, risk_aversion: f64) -> Vec<f64> {
    let excess = market.excess_drift(factor);
    market.solve_covariance(&excess).into_iter().map(|x| x / risk_aversion).collect()
}

/// Squared maximal Sharpe ratio `(mu - r)ᵀ (Sigma Sigmaᵀ)^{-1} (mu - r)` at factor `Y`.
pub fn effective_sharpe_sq(factor: f64, market: &Market) -> f64 {
    let excess = market.excess_drift(factor);
    let x = market.solve_covariance(&excess);
    excess.iter().zip(&x).map(|(a, b)| a * b).sum()
}

/// Myopic consumption ratio: the single-asset Merton fraction evaluated with
/// the effective squared Sharpe ratio at the current factor level.
pub fn myopic_consumption_fraction(
    t: f64,
    factor: f64,
    market: &Market,
    risk_aversion: f64,
    discount: f64,
    bequest_weight: f64,
) -> f64 {
    let p = market.params();
    let nu = merton_nu(p.risk_free_rate, effective_sharpe_sq(factor, market), risk_aversion, discount);
    1.0 / annuity_ratio(t, nu, bequest_weight, risk_aversion, p.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;

    #[test]
    fn weight_examples() {
        let p = MertonParams::validation();
        assert!((merton_weight(&p) - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(merton_weight(&MertonParams { mu: p.rate, ..p }), 0.0);
        let low = MertonParams { risk_aversion: 0.5, ..p };
        assert!((merton_weight(&low) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn consumption_fraction_terminal_value() {
        let p = MertonParams { bequest_weight: 1.0, ..MertonParams::validation() };
        assert!((merton_consumption_fraction(p.horizon, &p) - 1.0).abs() < 1e-15);
        let q = MertonParams::validation();
        let want = math::powf(q.bequest_weight, -1.0 / q.risk_aversion);
        assert!((merton_consumption_fraction(q.horizon, &q) - want).abs() < 1e-15);
    }

    #[test]
    fn value_terminal_condition_and_homotheticity() {
        let p = MertonParams::validation();
        let e = 1.0 - p.risk_aversion;
        let vt = merton_value(p.horizon, 1.3, &p).unwrap();
        let want = math::exp(-p.discount * p.horizon) * p.bequest_weight * math::powf(1.3, e) / e;
        assert!((vt / want - 1.0).abs() < 1e-14);
        for &t in &[0.0, 0.5, 1.2] {
            let ratio = merton_value(t, 2.0, &p).unwrap() / merton_value(t, 1.0, &p).unwrap();
            assert!((ratio - math::powf(2.0, e)).abs() < 1e-14);
        }
    }

    #[test]
    fn guard_accepts_closed_form() {
        assert!(merton_guard(&MertonParams::validation(), 1e-3).unwrap() < 1e-3);
        let p = MertonParams { bequest_weight: 1.0, ..MertonParams::validation() };
        assert!(merton_guard(&p, 1e-3).is_ok());
    }

    #[test]
    fn myopic_reduces_to_merton_for_one_asset() {
        let m = Market::new(MarketParams::single_asset(0.10, 0.20, 0.02, 1.5)).unwrap();
        let raw = myopic_weights_unconstrained(0.4, &m, 1.5);
        assert!((raw[0] - 4.0 / 3.0).abs() < 1e-12);
        let mut flat = MarketParams::baseline();
        for a in &mut flat.assets {
            a.mean_return = flat.risk_free_rate;
            a.lrr_beta = 0.0;
        }
        let m = Market::new(flat).unwrap();
        assert!(myopic_weights_unconstrained(0.7, &m, 1.5).iter().all(|x| x.abs() < 1e-12));
    }
}
