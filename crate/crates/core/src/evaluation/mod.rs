//! Welfare, distributional and cross-sectional reports on trained policies,
//! and the checks against the single-asset closed form.

pub mod hedging;
pub mod regression;
pub mod stats;
pub mod validation;
pub mod welfare;

pub use hedging::{
    cross_sectional_regressions, hedging_surfaces, mean_hedging_by_asset, rank_agreement, AssetHedging,
    Characteristic, CharacteristicRegression, HedgingPoint, HedgingSurface, StateBand, StateGrid,
};
pub use regression::{regress, RegressionResult, BOOTSTRAP_REPLICATIONS};
pub use stats::{spearman, terminal_wealth_stats, MeanSd, WealthStats};
pub use validation::{
    hjb_residual_crra, merton_validation, policy_errors, MertonSurface, MertonValidation, NetworkSurface,
    PolicyErrors, ResidualField, ValidationGrid, ValueSurface, terminal_gap,
};
pub use welfare::{
    annuity_factor, crra_certainty_equivalent, crra_objective_mc, evaluate_ez_value, ez_certainty_equivalent,
    CrraObjective, Estimate, PolicyEvaluationConfig, ValueEstimate,
};

use alloc::vec::Vec;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::projection::{project_consumption, project_portfolio};
use crate::simulate::{ControlProjector, Policy};

/// Controls actually applied at the given states: projected weights (raw
/// when the projector leaves the portfolio alone) and clipped consumption.
pub fn held_controls<P: Policy + ?Sized>(
    policy: &P,
    projector: &ControlProjector,
    t: &[f64],
    wealth: &[f64],
    factor: &[f64],
) -> Result<(Matrix, Vec<f64>)> {
    let d = policy.n_assets();
    let raw = policy.raw_controls(t, wealth, factor)?;
    let mut weights = Matrix::zeros(wealth.len(), d);
    let mut consumption = Vec::with_capacity(wealth.len());
    for i in 0..wealth.len() {
        let r = &raw.row(i)[..d];
        if projector.project_portfolio {
            weights.row_mut(i).copy_from_slice(&project_portfolio(r, &projector.portfolio));
        } else {
            weights.row_mut(i).copy_from_slice(r);
        }
        consumption.push(project_consumption(raw.get(i, d), wealth[i], &projector.consumption).0);
    }
    Ok((weights, consumption))
}

/// Applied portfolio weights at a common time.
pub fn held_weights<P: Policy + ?Sized>(
    policy: &P,
    projector: &ControlProjector,
    t: f64,
    wealth: &[f64],
    factor: &[f64],
) -> Result<Matrix> {
    let times = alloc::vec![t; wealth.len()];
    Ok(held_controls(policy, projector, &times, wealth, factor)?.0)
}
