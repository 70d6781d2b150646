//! Euclidean projections onto the admissible control set and their
//! generalized derivatives.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Raw and projected controls differing by more than this are flagged.
const ACTIVE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PortfolioMode {
    /// `pi >= 0`, `sum pi = budget`.
    EqualitySimplex,
    /// `pi >= 0`, `sum pi <= leverage_cap`.
    CappedSimplex,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PortfolioConstraint {
    pub mode: PortfolioMode,
    pub leverage_cap: f64,
    pub budget: f64,
}

impl Default for PortfolioConstraint {
    fn default() -> Self {
        PortfolioConstraint { mode: PortfolioMode::EqualitySimplex, leverage_cap: 2.0, budget: 1.0 }
    }
}

impl PortfolioConstraint {
    pub fn capped(leverage_cap: f64) -> Self {
        PortfolioConstraint { mode: PortfolioMode::CappedSimplex, leverage_cap, budget: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leverage_cap >= 1.0) || !self.leverage_cap.is_finite() {
            return Err(invalid("constraints.leverage_cap", "must be >= 1"));
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(invalid("constraints.budget", "must be > 0"));
        }
        Ok(())
    }

    /// Total the set allows in its binding face.
    pub fn level(&self) -> f64 {
        match self.mode {
            PortfolioMode::EqualitySimplex => self.budget,
            PortfolioMode::CappedSimplex => self.leverage_cap,
        }
    }

    /// Interior point used to centre a freshly initialized policy.
    pub fn centre(&self, d: usize) -> f64 {
        match self.mode {
            PortfolioMode::EqualitySimplex => self.budget / d as f64,
            PortfolioMode::CappedSimplex => self.leverage_cap / (2.0 * d as f64),
        }
    }

    pub fn contains(&self, pi: &[f64], tol: f64) -> bool {
        let s: f64 = pi.iter().sum();
        pi.iter().all(|&x| x >= -tol)
            && match self.mode {
                PortfolioMode::EqualitySimplex => (s - self.budget).abs() <= tol,
                PortfolioMode::CappedSimplex => s <= self.leverage_cap + tol,
            }
    }
}

/// Threshold `tau` with `sum max(x_i - tau, 0) = level`. Sorting is stable
/// on descending values, so ties keep ascending index order.
fn simplex_threshold(raw: &[f64], level: f64) -> f64 {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].partial_cmp(&raw[a]).unwrap_or(core::cmp::Ordering::Equal));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &i) in order.iter().enumerate() {
        cumulative += raw[i];
        let candidate = (cumulative - level) / (j + 1) as f64;
        if raw[i] - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    tau
}

/// Projection onto `{x >= 0, sum x = level}`.
pub fn project_simplex(raw: &[f64], level: f64) -> Vec<f64> {
    let tau = simplex_threshold(raw, level);
    raw.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Euclidean projection onto the portfolio set.
pub fn project_portfolio(raw: &[f64], cons: &PortfolioConstraint) -> Vec<f64> {
    match cons.mode {
        PortfolioMode::EqualitySimplex => project_simplex(raw, cons.budget),
        PortfolioMode::CappedSimplex => {
            let positive: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
            if positive.iter().sum::<f64>() <= cons.leverage_cap {
                positive
            } else {
                project_simplex(raw, cons.leverage_cap)
            }
        }
    }
}

/// How the projection is differentiated in the actor update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ProjectionGradient {
    /// Jacobian of the active face; clipped coordinates get zero.
    ActiveSet,
    /// Active-set Jacobian, plus clipped coordinates receive the part of the
    /// gradient that would move them back toward the feasible set.
    #[default]
    Inward,
}

/// Pulls a loss gradient `grad` (w.r.t. the projected weights) back to the
/// raw weights. Descent moves the raw weights along `-result`.
pub fn portfolio_pullback(
    raw: &[f64],
    projected: &[f64],
    grad: &[f64],
    cons: &PortfolioConstraint,
    rule: ProjectionGradient,
) -> Vec<f64> {
    let d = raw.len();
    let sum_positive: f64 = raw.iter().map(|&x| x.max(0.0)).sum();
    let on_face = match cons.mode {
        PortfolioMode::EqualitySimplex => true,
        PortfolioMode::CappedSimplex => sum_positive > cons.leverage_cap,
    };
    let mut out = vec![0.0; d];
    if !on_face {
        // Only the nonnegativity bounds can be active.
        for i in 0..d {
            if raw[i] >= 0.0 {
                out[i] = grad[i];
            } else if rule == ProjectionGradient::Inward && grad[i] < 0.0 {
                out[i] = grad[i];
            }
        }
        return out;
    }
    let active: Vec<bool> = projected.iter().map(|&y| y > 0.0).collect();
    let count = active.iter().filter(|&&a| a).count().max(1);
    let mean_active: f64 = (0..d).filter(|&i| active[i]).map(|i| grad[i]).sum::<f64>() / count as f64;
    for i in 0..d {
        let centred = grad[i] - mean_active;
        if active[i] {
            out[i] = centred;
        } else if rule == ProjectionGradient::Inward && centred < 0.0 {
            out[i] = centred;
        }
    }
    out
}

/// Consumption clip to `[floor_ratio W, cap W]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConsumptionBounds {
    pub cap_ratio: f64,
    pub floor_ratio: f64,
}

impl ConsumptionBounds {
    pub fn new(cap_ratio: f64) -> Self {
        ConsumptionBounds { cap_ratio, floor_ratio: 1e-6 }
    }

    pub fn bounds(&self, wealth: f64) -> (f64, f64) {
        (self.floor_ratio * wealth, self.cap_ratio * wealth)
    }
}

/// Returns the clipped consumption and whether the clip was active.
pub fn project_consumption(raw: f64, wealth: f64, b: &ConsumptionBounds) -> (f64, bool) {
    let (lo, hi) = b.bounds(wealth);
    let c = raw.max(lo).min(hi);
    (c, (c - raw).abs() > ACTIVE_TOL * raw.abs().max(1.0))
}

/// Pullback through the consumption clip (loss-gradient convention).
pub fn consumption_pullback(raw: f64, wealth: f64, grad: f64, b: &ConsumptionBounds, rule: ProjectionGradient) -> f64 {
    let (lo, hi) = b.bounds(wealth);
    if raw >= lo && raw <= hi {
        return grad;
    }
    let inward = (raw < lo && grad < 0.0) || (raw > hi && grad > 0.0);
    if rule == ProjectionGradient::Inward && inward {
        grad
    } else {
        0.0
    }
}

/// Projected control with activity flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedControl {
    pub weights: Vec<f64>,
    pub consumption: f64,
    pub portfolio_active: bool,
    pub consumption_active: bool,
}

/// Projects portfolio and consumption independently (the admissible set is a
/// product).
pub fn project_control(
    raw_weights: &[f64],
    raw_consumption: f64,
    wealth: f64,
    cons: &PortfolioConstraint,
    bounds: &ConsumptionBounds,
) -> ProjectedControl {
    let weights = project_portfolio(raw_weights, cons);
    let portfolio_active = distance(&weights, raw_weights) > ACTIVE_TOL;
    let (consumption, consumption_active) = project_consumption(raw_consumption, wealth, bounds);
    ProjectedControl { weights, consumption, portfolio_active, consumption_active }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    linalg::norm(&diff)
}

/// Relative projection distance `|P(x) - x| / (|x| + eps)`.
pub fn relative_projection_distance(raw: &[f64], projected: &[f64]) -> f64 {
    distance(projected, raw) / (linalg::norm(raw) + 1e-8)
}

/// Constraint-activity summary of a simulated batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionDiagnostics {
    pub portfolio_binding_rate: f64,
    pub consumption_binding_rate: f64,
    pub floor_hit_rate: f64,
    pub mean_relative_projection_distance: f64,
}

/// Accumulates per-step activity flags into rates.
#[derive(Clone, Debug, Default)]
pub struct DiagnosticsAccumulator {
    steps: usize,
    portfolio: usize,
    consumption: usize,
    floor: usize,
    distance_sum: f64,
}

impl DiagnosticsAccumulator {
    pub fn record(&mut self, portfolio_active: bool, consumption_active: bool, floor_hit: bool, rel_distance: f64) {
        self.steps += 1;
        self.portfolio += portfolio_active as usize;
        self.consumption += consumption_active as usize;
        self.floor += floor_hit as usize;
        self.distance_sum += rel_distance;
    }

    pub fn merge(&mut self, other: &DiagnosticsAccumulator) {
        self.steps += other.steps;
        self.portfolio += other.portfolio;
        self.consumption += other.consumption;
        self.floor += other.floor;
        self.distance_sum += other.distance_sum;
    }

    pub fn finish(&self) -> Result<ProjectionDiagnostics> {
        if self.steps == 0 {
            return Err(Error::Degenerate("diagnostics of an empty batch"));
        }
        let n = self.steps as f64;
        Ok(ProjectionDiagnostics {
            portfolio_binding_rate: self.portfolio as f64 / n,
            consumption_binding_rate: self.consumption as f64 / n,
            floor_hit_rate: self.floor as f64 / n,
            mean_relative_projection_distance: self.distance_sum / n,
        })
    }
}
