//! Checks of a trained single-asset policy against the Merton closed form.

use alloc::vec::Vec;

use super::hedging::linspace;
use super::held_controls;
use super::welfare::{crra_certainty_equivalent, crra_objective_mc, CrraObjective, Estimate};
use crate::analytic::{hjb_generator, merton_consumption_fraction, merton_value, merton_weight, MertonParams};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::Heads;
use crate::simulate::{ControlProjector, Executor, MertonPolicy, Policy, SimConfig};

/// `(t, W)` grid of the validation metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationGrid {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    /// Factor level held fixed on the grid.
    pub factor: f64,
}

impl ValidationGrid {
    /// `t_k = k T / 32` for `k < 32` and 50 wealth levels on `[0.1, 2.0]`.
    pub fn standard(horizon: f64, factor: f64) -> Self {
        ValidationGrid {
            times: (0..32).map(|k| k as f64 * horizon / 32.0).collect(),
            wealth: linspace(0.1, 2.0, 50),
            factor,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len() * self.wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened time-major `(t, W)` columns.
    pub fn points(&self) -> (Vec<f64>, Vec<f64>) {
        let mut t = Vec::with_capacity(self.len());
        let mut w = Vec::with_capacity(self.len());
        for &a in &self.times {
            for &b in &self.wealth {
                t.push(a);
                w.push(b);
            }
        }
        (t, w)
    }
}

/// Value function of the time-additive problem, `V(t, W)` in the units of
/// the closed form, with its wealth derivative.
pub trait ValueSurface {
    fn value_and_slope(&self, t: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Wealth step matching a step `h` on the surface's own input scale.
    fn wealth_step(&self, w: f64, h: f64) -> f64 {
        h * w
    }
}

/// The closed-form value.
#[derive(Clone, Copy, Debug)]
pub struct MertonSurface(pub MertonParams);

impl ValueSurface for MertonSurface {
    fn value_and_slope(&self, t: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = 1.0 - self.0.risk_aversion;
        let mut v = Vec::with_capacity(w.len());
        let mut vw = Vec::with_capacity(w.len());
        for (a, b) in t.iter().zip(w) {
            let x = merton_value(*a, *b, &self.0)?;
            v.push(x);
            vw.push(e * x / b);
        }
        Ok((v, vw))
    }
}

/// A trained recursive value network read in time-additive units: in the
/// CRRA limit with bequest weight `kappa`, `V_EZ = delta e^{delta t} V` where
/// `V` carries bequest weight `kappa / delta`.
#[derive(Clone, Copy, Debug)]
pub struct NetworkSurface<'a> {
    pub heads: Heads<'a>,
    pub factor: f64,
    pub discount: f64,
}

impl<'a> ValueSurface for NetworkSurface<'a> {
    fn value_and_slope(&self, t: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let y = alloc::vec![self.factor; w.len()];
        let b = self.heads.value_with_gradient(t, w, &y);
        let scale: Vec<f64> = t.iter().map(|s| math::exp(-self.discount * s) / self.discount).collect();
        let v = b.value.iter().zip(&scale).map(|(a, s)| a * s).collect();
        let vw = b.d_wealth.iter().zip(&scale).map(|(a, s)| a * s).collect();
        Ok((v, vw))
    }

    fn wealth_step(&self, w: f64, h: f64) -> f64 {
        h / self.heads.features.wealth_slope(w)
    }
}

/// HJB residual on a grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResidualField {
    pub times: Vec<f64>,
    pub wealth: Vec<f64>,
    /// Time-major residuals.
    pub residual: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub max_abs: f64,
}

/// Step of the second wealth difference, on the surface's input scale.
const WEALTH_STEP: f64 = 1e-3;

/// `L^u V = V_t + (rW + pi W (mu - r) - c) V_W + 1/2 (pi W sigma)^2 V_WW +
/// e^{-delta t} u(c)` with the controls `policy` applies. `V_W` comes from
/// the surface, `V_WW` from a central difference of `V_W`, `V_t` from a
/// central difference in time (forward at `t = 0`).
pub fn hjb_residual_crra<S: ValueSurface + ?Sized, P: Policy + ?Sized>(
    surface: &S,
    policy: &P,
    projector: &ControlProjector,
    grid: &ValidationGrid,
    merton: &MertonParams,
) -> Result<ResidualField> {
    if policy.n_assets() != 1 {
        return Err(Error::Shape { context: "HJB residual policy", expected: 1, found: policy.n_assets() });
    }
    let (t, w) = grid.points();
    let n = t.len();
    let y = alloc::vec![grid.factor; n];
    let (weights, consumption) = held_controls(policy, projector, &t, &w, &y)?;
    let ht = 1e-4 * merton.horizon;
    let t_up: Vec<f64> = t.iter().map(|s| s + ht).collect();
    let t_dn: Vec<f64> = t.iter().map(|s| (s - ht).max(0.0)).collect();
    let hw: Vec<f64> = w.iter().map(|x| surface.wealth_step(*x, WEALTH_STEP)).collect();
    let w_up: Vec<f64> = w.iter().zip(&hw).map(|(x, h)| x + h).collect();
    let w_dn: Vec<f64> = w.iter().zip(&hw).map(|(x, h)| x - h).collect();
    let (_, vw) = surface.value_and_slope(&t, &w)?;
    let (v_up, _) = surface.value_and_slope(&t_up, &w)?;
    let (v_dn, _) = surface.value_and_slope(&t_dn, &w)?;
    let (_, vw_up) = surface.value_and_slope(&t, &w_up)?;
    let (_, vw_dn) = surface.value_and_slope(&t, &w_dn)?;
    let mut residual = Vec::with_capacity(n);
    for i in 0..n {
        let v_t = (v_up[i] - v_dn[i]) / (t_up[i] - t_dn[i]);
        let v_ww = (vw_up[i] - vw_dn[i]) / (2.0 * hw[i]);
        let amount = weights.get(i, 0) * w[i];
        residual.push(hjb_generator(t[i], w[i], amount, consumption[i], v_t, vw[i], v_ww, merton)?);
    }
    let mean = math::mean(&residual);
    let sd = math::std_dev(&residual);
    let max_abs = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(ResidualField { times: grid.times.clone(), wealth: grid.wealth.clone(), residual, mean, sd, max_abs })
}

/// RMS distances between a policy and the closed form on a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyErrors {
    /// Dollar risky position `pi W`.
    pub amount: f64,
    /// Dollar consumption.
    pub consumption: f64,
    /// Portfolio weight.
    pub weight: f64,
    /// Consumption-to-wealth ratio.
    pub consumption_ratio: f64,
}

pub fn policy_errors<P: Policy + ?Sized>(
    policy: &P,
    projector: &ControlProjector,
    grid: &ValidationGrid,
    merton: &MertonParams,
) -> Result<PolicyErrors> {
    let (t, w) = grid.points();
    let y = alloc::vec![grid.factor; t.len()];
    let (weights, consumption) = held_controls(policy, projector, &t, &w, &y)?;
    let phi = merton_weight(merton);
    let mut sums = [0.0; 4];
    for i in 0..t.len() {
        let ratio = merton_consumption_fraction(t[i], merton);
        let dw = weights.get(i, 0) - phi;
        let dr = consumption[i] / w[i] - ratio;
        sums[0] += (dw * w[i]) * (dw * w[i]);
        sums[1] += (dr * w[i]) * (dr * w[i]);
        sums[2] += dw * dw;
        sums[3] += dr * dr;
    }
    let n = t.len() as f64;
    let rms = |s: f64| math::sqrt(s / n);
    Ok(PolicyErrors {
        amount: rms(sums[0]),
        consumption: rms(sums[1]),
        weight: rms(sums[2]),
        consumption_ratio: rms(sums[3]),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MertonValidation {
    pub errors: PolicyErrors,
    pub objective_merton: Estimate,
    pub objective_learned: Estimate,
    pub ce_merton: f64,
    pub ce_learned: f64,
    /// `|ce_learned - ce_merton| / ce_merton`.
    pub ce_gap: f64,
}

/// Grid errors plus certainty equivalents of both policies from direct
/// Monte Carlo with common random numbers (`ce_sim` fixes paths, start state
/// and seed).
pub fn merton_validation<P: Policy + ?Sized, E: Executor>(
    policy: &P,
    projector: &ControlProjector,
    market: &crate::market::Market,
    merton: &MertonParams,
    grid: &ValidationGrid,
    ce_sim: &SimConfig,
    executor: &E,
) -> Result<MertonValidation> {
    let errors = policy_errors(policy, projector, grid, merton)?;
    let objective = CrraObjective {
        risk_aversion: merton.risk_aversion,
        discount: merton.discount,
        bequest_weight: merton.bequest_weight,
    };
    let objective_merton = crra_objective_mc(&MertonPolicy(*merton), market, projector, ce_sim, &objective, executor)?;
    let objective_learned = crra_objective_mc(policy, market, projector, ce_sim, &objective, executor)?;
    let ce = |j: f64| {
        crra_certainty_equivalent(j, merton.risk_aversion, merton.discount, merton.bequest_weight, merton.horizon)
    };
    let ce_merton = ce(objective_merton.value)?;
    let ce_learned = ce(objective_learned.value)?;
    Ok(MertonValidation {
        errors,
        objective_merton,
        objective_learned,
        ce_merton,
        ce_learned,
        ce_gap: (ce_learned - ce_merton).abs() / ce_merton,
    })
}

/// Mean `|V(T - dt, W) - U(W)|` over the grid's wealth levels, in the
/// network's own units.
pub fn terminal_gap(heads: &Heads<'_>, grid: &ValidationGrid, dt: f64, preferences: &crate::preferences::EzParams) -> Result<f64> {
    let t = alloc::vec![heads.features.horizon - dt; grid.wealth.len()];
    let y = alloc::vec![grid.factor; grid.wealth.len()];
    let v = heads.value(&t, &grid.wealth, &y);
    let mut sum = 0.0;
    for (a, w) in v.iter().zip(&grid.wealth) {
        sum += (a - crate::preferences::bequest_utility(*w, preferences)?).abs();
    }
    Ok(sum / grid.wealth.len() as f64)
}
