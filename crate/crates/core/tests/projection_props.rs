mod oracles;

use ezpgdpo_core::projection::{project_consumption, project_portfolio, ConsumptionBounds, PortfolioConstraint};
use ezpgdpo_core::rng::Stream;
use oracles::{feasible_grid, kkt_violation, projection_by_enumeration};
use proptest::prelude::*;

fn modes() -> [PortfolioConstraint; 3] {
    [PortfolioConstraint::default(), PortfolioConstraint::capped(2.0), PortfolioConstraint::capped(1.0)]
}

fn norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn raw_vector(rng: &mut Stream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.uniform_in(-1.5, 2.5)).collect()
}

#[test]
fn small_dimensions_match_enumeration_and_beat_the_grid() {
    let mut rng = Stream::new(3);
    for cons in modes() {
        for d in 1..=3 {
            let grid = feasible_grid(d, &cons, 10_000);
            for _ in 0..200 {
                let raw = raw_vector(&mut rng, d);
                let out = project_portfolio(&raw, &cons);
                let exact = projection_by_enumeration(&raw, &cons);
                assert!(norm(&out, &exact) <= 1e-6, "{raw:?}: {out:?} vs {exact:?}");
                let own = norm(&out, &raw);
                for g in &grid {
                    assert!(own <= norm(g, &raw) + 1e-12);
                }
            }
        }
    }
}

#[test]
fn five_assets_satisfy_kkt() {
    let mut rng = Stream::new(5);
    for cons in modes() {
        for _ in 0..10_000 {
            let raw = raw_vector(&mut rng, 5);
            let out = project_portfolio(&raw, &cons);
            assert!(kkt_violation(&raw, &out, &cons) <= 1e-10, "{raw:?} -> {out:?}");
        }
    }
}

#[test]
fn equality_outputs_hit_the_budget() {
    let mut rng = Stream::new(8);
    let cons = PortfolioConstraint::default();
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..5).map(|_| 10.0 * rng.normal()).collect();
        let out = project_portfolio(&raw, &cons);
        assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(out.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn idempotent_and_nonexpansive_on_ten_thousand_pairs() {
    let mut rng = Stream::new(13);
    for cons in modes() {
        for _ in 0..10_000 {
            let x = raw_vector(&mut rng, 5);
            let y = raw_vector(&mut rng, 5);
            let (px, py) = (project_portfolio(&x, &cons), project_portfolio(&y, &cons));
            assert!(norm(&project_portfolio(&px, &cons), &px) <= 1e-12);
            assert!(norm(&px, &py) <= norm(&x, &y) + 1e-12);
        }
    }
}

#[test]
fn worked_examples() {
    let eq = PortfolioConstraint::default();
    let third = project_portfolio(&[0.5, 0.5, 0.5], &eq);
    assert!(third.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    assert_eq!(project_portfolio(&[2.0, 0.0, 0.0], &eq), vec![1.0, 0.0, 0.0]);
    assert_eq!(project_portfolio(&[0.5, 0.5, 0.5], &PortfolioConstraint::capped(2.0)), vec![0.5, 0.5, 0.5]);
    let b = ConsumptionBounds::new(0.25);
    assert_eq!(project_consumption(-0.1, 1.0, &b), (1e-6, true));
    assert_eq!(project_consumption(0.5, 1.0, &b), (0.25, true));
    assert_eq!(project_consumption(0.1, 1.0, &b), (0.1, false));
}

proptest! {
    #[test]
    fn projection_lands_in_the_set(
        raw in prop::collection::vec(-5.0f64..5.0, 1..8),
        cap in 1.0f64..4.0,
        equality in any::<bool>(),
    ) {
        let cons = if equality { PortfolioConstraint::default() } else { PortfolioConstraint::capped(cap) };
        let out = project_portfolio(&raw, &cons);
        prop_assert!(cons.contains(&out, 1e-12));
        prop_assert!(kkt_violation(&raw, &out, &cons) <= 1e-10);
    }

    #[test]
    fn consumption_lands_in_bounds(raw in -3.0f64..3.0, wealth in 0.1f64..5.0, cap in 0.01f64..0.99) {
        let b = ConsumptionBounds::new(cap);
        let (c, flagged) = project_consumption(raw, wealth, &b);
        prop_assert!(c >= 1e-6 * wealth && c <= cap * wealth);
        prop_assert_eq!(flagged, c != raw);
    }
}
