mod oracles;

use ezpgdpo_core::analytic::{
    merton_consumption_fraction, merton_value, merton_weight, myopic_weights, MeanVarianceSolver, MertonParams,
};
use ezpgdpo_core::market::{Market, MarketParams};
use ezpgdpo_core::projection::PortfolioConstraint;
use ezpgdpo_core::rng::Stream;
use oracles::{mean_variance, mean_variance_ascent, rel_err, solve_merton_hjb, Drift};

#[test]
fn closed_form_matches_hjb_grid_solution() {
    let p = MertonParams::validation();
    let sol = solve_merton_hjb(&p, 512, 512, 0.02, 10.0, Drift::Upwind);
    let mut worst_v: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    for k in 0..=32 {
        let t = k as f64 * p.horizon / 32.0;
        for j in 0..50 {
            let w = 0.1 + j as f64 * 1.9 / 49.0;
            worst_v = worst_v.max(rel_err(sol.value(t, w), merton_value(t, w, &p).unwrap(), 1e-300));
            worst_c = worst_c.max(rel_err(sol.consumption_fraction(t, w), merton_consumption_fraction(t, &p), 1e-300));
        }
    }
    assert!(worst_v <= 1e-3, "value mismatch {worst_v:e}");
    assert!(worst_c <= 1e-3, "consumption mismatch {worst_c:e}");
    let v01 = sol.value(0.0, 1.0);
    assert!(rel_err(v01, merton_value(0.0, 1.0, &p).unwrap(), 1e-300) <= 1e-3, "V(0,1) = {v01}");
}

#[test]
fn hjb_solution_agrees_at_a_second_parameter_set() {
    let p = MertonParams { mu: 0.07, sigma: 0.25, risk_aversion: 3.0, discount: 0.05, bequest_weight: 2.0, ..MertonParams::validation() };
    let worst = |sol: &oracles::HjbSolution| {
        let mut e: f64 = 0.0;
        for t in [0.0, 0.75, 1.5] {
            for w in [0.1, 0.5, 1.0, 2.0] {
                e = e.max(rel_err(sol.value(t, w), merton_value(t, w, &p).unwrap(), 1e-300));
                e = e.max(rel_err(sol.consumption_fraction(t, w), merton_consumption_fraction(t, &p), 1e-300));
            }
        }
        e
    };
    let central = worst(&solve_merton_hjb(&p, 512, 512, 0.02, 10.0, Drift::Central));
    assert!(central <= 1e-3, "{central:e}");
    // strong consumption drift: upwinding is first order in the grid step
    let coarse = worst(&solve_merton_hjb(&p, 512, 512, 0.02, 10.0, Drift::Upwind));
    let fine = worst(&solve_merton_hjb(&p, 1024, 512, 0.02, 10.0, Drift::Upwind));
    let ratio = coarse / fine;
    assert!((1.8..2.2).contains(&ratio), "{coarse:e} -> {fine:e}");
}

#[test]
fn pure_discounting_limit_matches_deterministic_smoothing() {
    let (rate, delta, horizon) = (0.02, 0.03, 1.5);
    let p = MertonParams {
        mu: rate,
        sigma: 0.2,
        rate,
        risk_aversion: 1.0 + 1e-6,
        discount: delta,
        bequest_weight: 1e-12,
        horizon,
    };
    assert_eq!(merton_weight(&p), 0.0);
    let brute = oracles::deterministic_log_consumption_ratio(rate, delta, horizon, 100_000);
    let limit = delta / (1.0 - (-delta * horizon).exp());
    assert!(rel_err(brute, limit, 1e-300) < 1e-3, "{brute} vs {limit}");
    for t in [0.0, 0.3, 0.9, 1.2] {
        let target = delta / (1.0 - (-delta * (horizon - t)).exp());
        assert!(rel_err(merton_consumption_fraction(t, &p), target, 1e-300) < 1e-3);
    }
    assert!(rel_err(merton_consumption_fraction(0.0, &p), brute, 1e-300) < 1e-3);
}

#[test]
fn closed_form_ignores_time_and_wealth_in_the_weight() {
    let p = MertonParams::validation();
    assert!((merton_weight(&p) - 0.08 / (1.5 * 0.04)).abs() < 1e-15);
    let mut cheaper = p;
    cheaper.horizon = 3.0;
    assert_eq!(merton_weight(&p), merton_weight(&cheaper));
}

fn baseline() -> Market {
    Market::new(MarketParams::baseline()).unwrap()
}

#[test]
fn myopic_weights_are_the_mean_variance_argmax_on_random_factors() {
    let m = baseline();
    let sd = m.params().factor_stationary_sd();
    let mut rng = Stream::new(11);
    for cons in [PortfolioConstraint::default(), PortfolioConstraint::capped(2.0)] {
        let solver = MeanVarianceSolver::new(&m, 1.5, &cons).unwrap();
        for _ in 0..100 {
            let y = m.params().factor_mean + sd * rng.uniform_in(-4.0, 4.0);
            let excess = m.excess_drift(y);
            let fast = solver.solve(&excess);
            let slow = mean_variance_ascent(&excess, m.covariance(), 1.5, &cons);
            let gap: f64 = fast.iter().zip(&slow).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(gap <= 1e-4, "y = {y}: {fast:?} vs {slow:?}");
            assert_eq!(fast, myopic_weights(y, &m, 1.5, &cons));
        }
    }
}

#[test]
fn myopic_weights_beat_every_grid_portfolio_at_the_mean_factor() {
    let m = baseline();
    let cons = PortfolioConstraint::default();
    let y = m.params().factor_mean;
    let excess = m.excess_drift(y);
    let pi = myopic_weights(y, &m, 1.5, &cons);
    let best = mean_variance(&excess, m.covariance(), 1.5, &pi);
    let grid = oracles::feasible_grid(5, &cons, 300_000);
    let mut grid_best = (f64::NEG_INFINITY, Vec::new());
    for g in &grid {
        let v = mean_variance(&excess, m.covariance(), 1.5, g);
        assert!(v <= best + 1e-12);
        if v > grid_best.0 {
            grid_best = (v, g.clone());
        }
    }
    let gap: f64 = grid_best.1.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 0.05, "{pi:?} vs grid {:?}", grid_best.1);
}

#[test]
fn excess_free_market_has_zero_unconstrained_myopic_weight() {
    let mut p = MarketParams::baseline();
    for a in p.assets.iter_mut() {
        a.mean_return = p.risk_free_rate;
    }
    let m = Market::new(p).unwrap();
    let w = ezpgdpo_core::analytic::myopic_weights_unconstrained(m.params().factor_mean, &m, 1.5);
    assert!(w.iter().all(|x| x.abs() < 1e-15));
    let capped = myopic_weights(m.params().factor_mean, &m, 1.5, &PortfolioConstraint::capped(2.0));
    assert!(capped.iter().all(|&x| x == 0.0));
}
