//! Myopic/hedging decomposition of a portfolio policy on a state grid.

use alloc::vec::Vec;

use super::held_weights;
use super::regression::{regress, RegressionResult};
use super::stats::spearman;
use crate::error::{invalid, Error, Result};
use crate::market::{Market, MarketParams};
use crate::rng::derive_seed;
use crate::simulate::{ControlProjector, Policy};

/// Uniform `(W, Y)` grid at a fixed time.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateGrid {
    pub t: f64,
    pub wealth: Vec<f64>,
    pub factor: Vec<f64>,
}

/// `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl StateGrid {
    pub fn uniform(t: f64, wealth: (f64, f64), factor: (f64, f64), n_wealth: usize, n_factor: usize) -> Self {
        StateGrid { t, wealth: linspace(wealth.0, wealth.1, n_wealth), factor: linspace(factor.0, factor.1, n_factor) }
    }

    /// 10 x 10 grid at mid-horizon: wealth `1 +- W_max/2`, factor within two
    /// stationary standard deviations of its mean.
    pub fn cross_section(p: &MarketParams) -> Self {
        let half = 0.5 * p.wealth_band_max;
        let sd = p.factor_stationary_sd();
        StateGrid::uniform(
            0.5 * p.horizon,
            (1.0 - half, 1.0 + half),
            (p.factor_mean - 2.0 * sd, p.factor_mean + 2.0 * sd),
            10,
            10,
        )
    }

    pub fn len(&self) -> usize {
        self.wealth.len() * self.factor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points, wealth-major.
    pub fn points(&self) -> (Vec<f64>, Vec<f64>) {
        let mut w = Vec::with_capacity(self.len());
        let mut y = Vec::with_capacity(self.len());
        for &a in &self.wealth {
            for &b in &self.factor {
                w.push(a);
                y.push(b);
            }
        }
        (w, y)
    }

    fn factor_extent(&self) -> f64 {
        let lo = self.factor.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.factor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Region of the state space covered by training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateBand {
    pub wealth: (f64, f64),
    pub factor: (f64, f64),
}

impl StateBand {
    /// Wealth above the floor; factor within `truncation_sd` stationary
    /// standard deviations of its mean.
    pub fn of_market(p: &MarketParams, truncation_sd: f64) -> Self {
        let sd = p.factor_stationary_sd();
        StateBand {
            wealth: (p.wealth_floor, f64::INFINITY),
            factor: (p.factor_mean - truncation_sd * sd, p.factor_mean + truncation_sd * sd),
        }
    }

    pub fn contains(&self, w: f64, y: f64) -> bool {
        w >= self.wealth.0 && w <= self.wealth.1 && y >= self.factor.0 && y <= self.factor.1
    }
}

/// One asset at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HedgingPoint {
    pub wealth: f64,
    pub factor: f64,
    pub asset: usize,
    pub policy_weight: f64,
    pub myopic_weight: f64,
    /// `policy_weight - myopic_weight`.
    pub hedge: f64,
    /// Central difference of the policy weight in the factor.
    pub factor_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HedgingSurface {
    pub t: f64,
    pub n_assets: usize,
    /// Rows ordered by grid point (wealth-major), then asset.
    pub points: Vec<HedgingPoint>,
    /// Grid points outside the training band.
    pub extrapolated: usize,
}

/// Evaluates both policies on `grid` and decomposes the policy into myopic
/// and hedging parts. With `factor_slopes`, also differentiates the policy
/// weights in `Y` with step `0.01 x` the grid's factor extent.
pub fn hedging_surfaces<P: Policy + ?Sized, Q: Policy + ?Sized>(
    policy: &P,
    myopic: &Q,
    projector: &ControlProjector,
    grid: &StateGrid,
    band: &StateBand,
    factor_slopes: bool,
) -> Result<HedgingSurface> {
    let d = policy.n_assets();
    if myopic.n_assets() != d {
        return Err(Error::Shape { context: "hedging benchmark", expected: d, found: myopic.n_assets() });
    }
    if grid.is_empty() {
        return Err(invalid("grid", "empty hedging grid"));
    }
    let (w, y) = grid.points();
    let ez = held_weights(policy, projector, grid.t, &w, &y)?;
    let my = held_weights(myopic, projector, grid.t, &w, &y)?;
    let slopes = if factor_slopes {
        let h = 0.01 * grid.factor_extent();
        if !(h > 0.0) {
            return Err(invalid("grid.factor", "factor slopes need a factor extent > 0"));
        }
        let up: Vec<f64> = y.iter().map(|v| v + h).collect();
        let dn: Vec<f64> = y.iter().map(|v| v - h).collect();
        let a = held_weights(policy, projector, grid.t, &w, &up)?;
        let b = held_weights(policy, projector, grid.t, &w, &dn)?;
        Some(a.zip_map(&b, |p, q| (p - q) / (2.0 * h)))
    } else {
        None
    };
    let mut points = Vec::with_capacity(w.len() * d);
    for i in 0..w.len() {
        for j in 0..d {
            let (p, m) = (ez.get(i, j), my.get(i, j));
            points.push(HedgingPoint {
                wealth: w[i],
                factor: y[i],
                asset: j,
                policy_weight: p,
                myopic_weight: m,
                hedge: p - m,
                factor_slope: slopes.as_ref().map(|s| s.get(i, j)),
            });
        }
    }
    let extrapolated = w.iter().zip(&y).filter(|(a, b)| !band.contains(**a, **b)).count();
    Ok(HedgingSurface { t: grid.t, n_assets: d, points, extrapolated })
}

/// Grid-average absolute hedging demand of one asset.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssetHedging {
    pub asset: usize,
    pub mean_abs_hedge: f64,
    /// 1 for the largest demand.
    pub rank: usize,
}

pub fn mean_hedging_by_asset(surface: &HedgingSurface) -> Vec<AssetHedging> {
    let d = surface.n_assets;
    let mut sum = alloc::vec![0.0; d];
    let mut count = alloc::vec![0usize; d];
    for p in &surface.points {
        sum[p.asset] += p.hedge.abs();
        count[p.asset] += 1;
    }
    let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let mut out: Vec<AssetHedging> =
        (0..d).map(|j| AssetHedging { asset: j, mean_abs_hedge: means[j], rank: 0 }).collect();
    for (r, &j) in order.iter().enumerate() {
        out[j].rank = r + 1;
    }
    out
}

/// Spearman correlation between the per-asset demands and the reference
/// ordering in which demand decreases with the asset index.
pub fn rank_agreement(by_asset: &[AssetHedging]) -> Result<f64> {
    let demand: Vec<f64> = by_asset.iter().map(|a| a.mean_abs_hedge).collect();
    let reference: Vec<f64> = (0..by_asset.len()).map(|j| (by_asset.len() - j) as f64).collect();
    spearman(&demand, &reference)
}

/// Asset characteristics used as regressors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Characteristic {
    /// Correlation of the return with the factor.
    FactorCorrelation,
    /// Drift loading on the factor.
    LrrBeta,
    /// `(mean return - r) / volatility`.
    Sharpe,
    Volatility,
}

impl Characteristic {
    pub const ALL: [Characteristic; 4] =
        [Characteristic::FactorCorrelation, Characteristic::LrrBeta, Characteristic::Sharpe, Characteristic::Volatility];

    pub fn name(self) -> &'static str {
        match self {
            Characteristic::FactorCorrelation => "rho",
            Characteristic::LrrBeta => "beta_lrr",
            Characteristic::Sharpe => "sharpe",
            Characteristic::Volatility => "sigma",
        }
    }

    pub fn of(self, market: &Market, asset: usize) -> f64 {
        let p = market.params();
        let a = &p.assets[asset];
        match self {
            Characteristic::FactorCorrelation => a.factor_correlation,
            Characteristic::LrrBeta => a.lrr_beta,
            Characteristic::Sharpe => (a.mean_return - p.risk_free_rate) / a.volatility,
            Characteristic::Volatility => a.volatility,
        }
    }

    /// Sign of the slope expected from hedging theory.
    pub fn expected_sign(self) -> f64 {
        match self {
            Characteristic::FactorCorrelation | Characteristic::LrrBeta => 1.0,
            Characteristic::Sharpe | Characteristic::Volatility => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CharacteristicRegression {
    pub characteristic: Characteristic,
    pub result: RegressionResult,
}

/// Univariate regressions of `|hedge|` at every (asset, grid point) on each
/// asset characteristic.
pub fn cross_sectional_regressions(
    surface: &HedgingSurface,
    market: &Market,
    replications: usize,
    seed: u64,
) -> Result<Vec<CharacteristicRegression>> {
    if market.n_assets() != surface.n_assets {
        return Err(Error::Shape { context: "regression market", expected: surface.n_assets, found: market.n_assets() });
    }
    let y: Vec<f64> = surface.points.iter().map(|p| p.hedge.abs()).collect();
    Characteristic::ALL
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let x: Vec<f64> = surface.points.iter().map(|p| c.of(market, p.asset)).collect();
            let result = regress(&x, &y, replications, derive_seed(seed, k as u64))?;
            Ok(CharacteristicRegression { characteristic: c, result })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::myopic_weights;
    use crate::linalg::Matrix;
    use crate::projection::PortfolioConstraint;
    use crate::simulate::MyopicPolicy;

    fn market() -> Market {
        Market::new(MarketParams::baseline()).unwrap()
    }

    fn myopic(m: &Market) -> MyopicPolicy {
        MyopicPolicy::new(m.clone(), 1.5, 0.03, 1.0, &PortfolioConstraint::default()).unwrap()
    }

    fn projector() -> ControlProjector {
        ControlProjector::new(PortfolioConstraint::default(), 0.25)
    }

    /// Weights `a + b Y` on each asset, unprojected.
    struct Linear {
        a: [f64; 5],
        b: [f64; 5],
    }

    impl Policy for Linear {
        fn n_assets(&self) -> usize {
            5
        }

        fn raw_controls(&self, _t: &[f64], wealth: &[f64], factor: &[f64]) -> Result<Matrix> {
            Ok(Matrix::from_fn(wealth.len(), 6, |i, j| {
                if j < 5 {
                    self.a[j] + self.b[j] * factor[i]
                } else {
                    0.1 * wealth[i]
                }
            }))
        }
    }

    #[test]
    fn myopic_against_itself_has_no_hedging() {
        let m = market();
        let p = myopic(&m);
        let grid = StateGrid::cross_section(m.params());
        let band = StateBand::of_market(m.params(), 3.0);
        let s = hedging_surfaces(&p, &p, &projector(), &grid, &band, false).unwrap();
        assert_eq!(s.points.len(), 500);
        assert!(s.points.iter().all(|q| q.hedge == 0.0));
        assert!(mean_hedging_by_asset(&s).iter().all(|a| a.mean_abs_hedge == 0.0));
        assert_eq!(s.extrapolated, 0);
        let q = &s.points[37];
        let expected = myopic_weights(q.factor, &m, 1.5, &PortfolioConstraint::default());
        assert!((q.myopic_weight - expected[q.asset]).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identity_holds_pointwise() {
        let m = market();
        let lin = Linear { a: [0.3, 0.1, 0.2, 0.25, 0.15], b: [0.2, -0.1, 0.0, 0.05, -0.15] };
        let grid = StateGrid::cross_section(m.params());
        let band = StateBand::of_market(m.params(), 3.0);
        let s = hedging_surfaces(&lin, &myopic(&m), &projector(), &grid, &band, false).unwrap();
        assert!(s.points.iter().all(|q| q.policy_weight == q.myopic_weight + q.hedge || (q.policy_weight - q.myopic_weight - q.hedge).abs() < 1e-16));
    }

    #[test]
    fn linear_policy_slope_recovered() {
        let m = market();
        let lin = Linear { a: [0.3, 0.1, 0.2, 0.25, 0.15], b: [0.2, -0.1, 0.0, 0.05, -0.15] };
        let mut pr = projector();
        pr.project_portfolio = false;
        let grid = StateGrid::cross_section(m.params());
        let band = StateBand::of_market(m.params(), 3.0);
        let s = hedging_surfaces(&lin, &myopic(&m), &pr, &grid, &band, true).unwrap();
        for q in &s.points {
            assert!((q.factor_slope.unwrap() - lin.b[q.asset]).abs() < 1e-6);
        }
    }

    #[test]
    fn factor_independent_policy_has_zero_slope() {
        let m = market();
        let lin = Linear { a: [0.3, 0.1, 0.2, 0.25, 0.15], b: [0.0; 5] };
        let grid = StateGrid::cross_section(m.params());
        let band = StateBand::of_market(m.params(), 3.0);
        let s = hedging_surfaces(&lin, &myopic(&m), &projector(), &grid, &band, true).unwrap();
        assert!(s.points.iter().all(|q| q.factor_slope == Some(0.0)));
    }

    #[test]
    fn hand_built_average_and_ranks() {
        let points = (0..4)
            .flat_map(|i| {
                (0..3).map(move |j| {
                    let hedge = match j {
                        0 => if i % 2 == 0 { 0.5 } else { -0.5 },
                        1 => 0.1,
                        _ => -0.3,
                    };
                    HedgingPoint { wealth: 1.0, factor: 0.4, asset: j, policy_weight: 0.0, myopic_weight: -hedge, hedge, factor_slope: None }
                })
            })
            .collect();
        let s = HedgingSurface { t: 0.0, n_assets: 3, points, extrapolated: 0 };
        let by = mean_hedging_by_asset(&s);
        assert!((by[0].mean_abs_hedge - 0.5).abs() < 1e-15);
        assert_eq!([by[0].rank, by[1].rank, by[2].rank], [1, 3, 2]);
        let r = rank_agreement(&by).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_points_are_counted() {
        let m = market();
        let p = myopic(&m);
        let grid = StateGrid::uniform(0.5, (0.01, 1.0), (0.4, 0.4), 3, 1);
        let band = StateBand::of_market(m.params(), 3.0);
        let s = hedging_surfaces(&p, &p, &projector(), &grid, &band, false).unwrap();
        assert_eq!(s.extrapolated, 1);
    }

    #[test]
    fn regressions_recover_planted_signs() {
        let m = market();
        // hedge magnitude proportional to the factor correlation
        let points = (0..100)
            .flat_map(|_| (0..5).map(|j| j))
            .map(|j| {
                let h = 0.8 * m.params().assets[j].factor_correlation;
                HedgingPoint { wealth: 1.0, factor: 0.4, asset: j, policy_weight: h, myopic_weight: 0.0, hedge: h, factor_slope: None }
            })
            .collect();
        let s = HedgingSurface { t: 0.75, n_assets: 5, points, extrapolated: 0 };
        let regs = cross_sectional_regressions(&s, &m, 50, 1).unwrap();
        assert_eq!(regs.len(), 4);
        let rho = regs[0].result;
        assert!((rho.slope - 0.8).abs() < 1e-12 && (rho.r_squared - 1.0).abs() < 1e-12);
        assert!(regs[2].result.slope < 0.0 && regs[3].result.slope < 0.0);
    }
}
