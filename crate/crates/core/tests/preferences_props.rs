mod oracles;

use ezpgdpo_core::evaluation::welfare::ez_certainty_equivalent;
use ezpgdpo_core::preferences::{
    aggregator_zero_consumption, crra_limit_sweep, crra_utility, ez_aggregator, ez_aggregator_dc, EzParams,
};
use ezpgdpo_core::rng::Stream;
use oracles::{central_diff, rel_err};
use proptest::prelude::*;

/// Admissible `(c, v)` pairs for `R > 1`: positive consumption, negative
/// continuation value.
fn admissible_set(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = Stream::new(seed);
    (0..n).map(|_| (rng.uniform_in(0.01, 3.0), -rng.uniform_in(0.05, 30.0))).collect()
}

#[test]
fn marginal_aggregator_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for (k, (c, v)) in admissible_set(2000, 1).into_iter().enumerate() {
        let p = match k % 3 {
            0 => EzParams::default(),
            1 => EzParams { risk_aversion: 4.0, eis: 1.5, ..EzParams::default() },
            _ => EzParams { eis: 1.0 / 1.5, ..EzParams::default() },
        };
        let fd = central_diff(|x| ez_aggregator(x, v, &p).unwrap(), c, 1e-6 * c);
        worst = worst.max(rel_err(ez_aggregator_dc(c, v, &p).unwrap(), fd, 1e-300));
    }
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn limit_deviation_shrinks_along_the_refinement() {
    let base = EzParams::default();
    let target = 1.0 / base.risk_aversion;
    let offsets = [1e-1, 1e-2, 1e-3, 1e-4];
    let eis: Vec<f64> = offsets.iter().map(|o| target + o).collect();
    let below: Vec<f64> = offsets.iter().map(|o| target - o).collect();
    for (c, v) in admissible_set(500, 2) {
        for grid in [&eis, &below] {
            let dev = crra_limit_sweep(c, v, &base, grid).unwrap();
            assert!(dev.windows(2).all(|w| w[1] < w[0]), "({c}, {v}): {dev:?}");
            assert!(dev[3] <= 1e-3, "({c}, {v}): {dev:?}");
        }
    }
    assert_eq!(crra_limit_sweep(2.0, -2.0, &base, &[target]).unwrap(), vec![0.0]);
}

#[test]
fn limit_branch_is_time_additive() {
    let p = EzParams { eis: 1.0 / 1.5, ..EzParams::default() };
    for (c, v) in admissible_set(200, 3) {
        let f = ez_aggregator(c, v, &p).unwrap();
        assert!((f - 0.03 * (crra_utility(c, 1.5).unwrap() - v)).abs() <= 1e-15 * f.abs().max(1.0));
        assert!(rel_err(ez_aggregator_dc(c, v, &p).unwrap(), 0.03 * c.powf(-1.5), 1e-300) <= 1e-14);
    }
}

#[test]
fn worked_examples() {
    let p = EzParams::default();
    assert_eq!(ez_aggregator(1.0, -2.0, &p).unwrap(), 0.0);
    assert!((ez_aggregator(2.0, -2.0, &p).unwrap() - 0.015).abs() < 1e-15);
    assert!((ez_aggregator_dc(2.0, -2.0, &p).unwrap() - 0.0075).abs() < 1e-15);
    let limit = EzParams { eis: 1.0 / 1.5, ..p };
    assert!((ez_aggregator(1.0, -3.0, &limit).unwrap() - 0.03).abs() < 1e-15);
    assert!(ez_aggregator(1.0, 2.0, &p).is_err());
    assert!(ez_aggregator(0.0, -2.0, &p).is_err());
}

proptest! {
    #[test]
    fn aggregator_vanishes_at_the_certainty_equivalent(
        r in prop_oneof![0.2f64..0.9, 1.1f64..8.0],
        eis in 0.1f64..3.0,
        magnitude in 0.05f64..50.0,
    ) {
        let p = EzParams { risk_aversion: r, eis, limit_tol: 0.0, ..EzParams::default() };
        prop_assume!((p.inverse_eis() - r).abs() > 1e-3);
        // same sign as 1 - R
        let v = if r > 1.0 { -magnitude } else { magnitude };
        let c = aggregator_zero_consumption(v, &p);
        prop_assert_eq!(ez_aggregator(c, v, &p).unwrap(), 0.0);
    }

    #[test]
    fn ez_certainty_equivalent_increases_with_value(a in 0.05f64..20.0, b in 0.05f64..20.0, r in 1.1f64..6.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // for R > 1 values are negative; larger value means smaller magnitude
        let ce_lo = ez_certainty_equivalent(-hi, r).unwrap();
        let ce_hi = ez_certainty_equivalent(-lo, r).unwrap();
        prop_assert!(ce_hi > ce_lo);
    }
}
