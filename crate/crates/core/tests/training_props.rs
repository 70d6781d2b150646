use ezpgdpo_core::market::{Market, MarketParams};
use ezpgdpo_core::nn::Mlp;
use ezpgdpo_core::pgdpo::losses::{actor_objective_at, value_loss, adjoint_loss, ActorSettings, CostateSource};
use ezpgdpo_core::pgdpo::{train, NetworkConfig, Problem, TrainConfig, Trainer};
use ezpgdpo_core::preferences::EzParams;
use ezpgdpo_core::projection::{ConsumptionBounds, PortfolioConstraint, ProjectionGradient};
use ezpgdpo_core::rng::Stream;
use ezpgdpo_core::simulate::Sequential;
use proptest::prelude::*;

fn problem() -> Problem {
    Problem::new(Market::new(MarketParams::baseline()).unwrap(), EzParams::default(), PortfolioConstraint::default())
        .unwrap()
}

fn small(iterations: usize) -> TrainConfig {
    TrainConfig {
        steps: 8,
        batch: 16,
        iterations,
        value_points: 64,
        costate_points: 32,
        network: NetworkConfig { hidden_layers: 2, hidden_width: 8, ..NetworkConfig::default() },
        chunk: 8,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_return_the_initial_networks() {
    let pb = problem();
    let (nets, log) = train(&pb, small(0), 4, None).unwrap();
    assert!(log.is_empty());
    assert_eq!(nets, pb.fresh_networks(&small(0), 4).unwrap());
}

#[test]
fn same_seed_gives_bit_identical_training() {
    let pb = problem();
    let a = train(&pb, small(6), 12, None).unwrap();
    let b = train(&pb, small(6), 12, None).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0, b.0);
    let c = train(&pb, small(6), 13, None).unwrap();
    assert_ne!(a.1, c.1);
}

#[test]
fn training_batches_respect_the_floor_and_losses_are_nonnegative() {
    let pb = problem();
    let mut trainer = Trainer::new(&pb, small(12), 3, None).unwrap();
    while !trainer.should_stop() {
        let it = trainer.iteration();
        let batch = trainer.simulate(it, &Sequential).unwrap();
        assert!(batch.wealth.iter().all(|&w| w >= 0.1));
        let ctx = pb.context(trainer.config());
        assert!(value_loss(&batch, trainer.networks(), &ctx).unwrap() >= 0.0);
        assert!(adjoint_loss(&batch, trainer.networks(), &ctx) >= 0.0);
        let row = trainer.iterate(&Sequential).unwrap();
        assert!(row.value_loss >= 0.0 && row.adjoint_loss >= 0.0);
        assert_eq!(row.floor_violations, 0);
    }
}

#[test]
fn small_actor_steps_do_not_decrease_the_frozen_objective() {
    let pb = problem();
    let cfg = small(0);
    let settings = ActorSettings {
        curvature: cfg.actor_curvature,
        source: CostateSource::Network,
        constraint: pb.constraint,
        consumption: ConsumptionBounds::new(pb.preferences.consumption_cap),
        project_portfolio: true,
        // the active-set rule is the exact derivative of the projected objective
        rule: ProjectionGradient::ActiveSet,
        weights: cfg.weights,
    };
    let ctx = pb.context(&cfg);
    let mut rng = Stream::new(99);
    let mut improved = 0;
    for trial in 0..20 {
        let mut nets = pb.fresh_networks(&cfg, trial).unwrap();
        let spec = *nets.policy.spec();
        nets.policy = Mlp::random(spec, rng.next_u64(), 0.3).unwrap();
        let n = 64;
        let t: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 1.4)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.5, 1.5)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.3, 0.5)).collect();
        let before = actor_objective_at(&nets, &ctx, &settings, &t, &w, &y, true).unwrap();
        let norm = before.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut p = nets.policy.params();
        for (x, g) in p.iter_mut().zip(&before.gradient) {
            *x += 1e-4 * g / norm.max(1e-300);
        }
        nets.policy.set_params(&p).unwrap();
        let after = actor_objective_at(&nets, &ctx, &settings, &t, &w, &y, false).unwrap();
        if after.objective >= before.objective {
            improved += 1;
        }
    }
    assert!(improved >= 18, "{improved} of 20");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn losses_are_nonnegative_for_random_critics(seed in any::<u64>(), scale in 0.01f64..1.0) {
        let pb = problem();
        let cfg = small(0);
        let trainer = Trainer::new(&pb, cfg, seed, None).unwrap();
        let batch = trainer.simulate(0, &Sequential).unwrap();
        let mut nets = trainer.into_networks();
        nets.value = Mlp::random(*nets.value.spec(), seed ^ 1, scale).unwrap();
        nets.costate = Mlp::random(*nets.costate.spec(), seed ^ 2, scale).unwrap();
        let ctx = pb.context(&cfg);
        prop_assert!(value_loss(&batch, &nets, &ctx).unwrap() >= 0.0);
        prop_assert!(adjoint_loss(&batch, &nets, &ctx) >= 0.0);
    }
}
