//! Alternating critic/actor training loop.

use alloc::vec::Vec;

use super::config::{Ablation, TrainConfig};
use super::losses::{
    actor_objective_at, adjoint_loss_on_tape, gather, value_loss_on_tape, ActorSettings, CostateSource, LossContext,
    Point,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::market::Market;
use crate::math;
use crate::nn::{adam_step, FeatureMap, HeadConfig, Heads, NetworkTriple, Tape};
use crate::preferences::EzParams;
use crate::projection::{ConsumptionBounds, PortfolioConstraint};
use crate::rng::{derive_seed, tag, Stream};
use crate::simulate::{simulate_batch, ControlProjector, Executor, PathBatch, Policy, SimConfig};

/// Floor used by the no-floor ablation, relative to the configured floor.
const GUARD_FRACTION: f64 = 1e-6;

/// Market, preferences and portfolio set of one problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub market: Market,
    pub preferences: EzParams,
    pub constraint: PortfolioConstraint,
}

impl Problem {
    pub fn new(market: Market, preferences: EzParams, constraint: PortfolioConstraint) -> Result<Self> {
        preferences.validate()?;
        constraint.validate()?;
        Ok(Problem { market, preferences, constraint })
    }

    pub fn head_config(&self, cfg: &TrainConfig) -> HeadConfig {
        HeadConfig {
            risk_aversion: self.preferences.risk_aversion,
            value_head: cfg.network.value_head,
            costate_head: cfg.network.costate_head,
            portfolio_centre: self.constraint.centre(self.market.n_assets()),
            consumption_centre: 0.5 * self.preferences.consumption_cap,
        }
    }

    pub fn feature_map(&self, cfg: &TrainConfig) -> FeatureMap {
        FeatureMap::new(self.market.params(), cfg.network.wealth_encoding)
    }

    pub fn context(&self, cfg: &TrainConfig) -> LossContext<'_> {
        LossContext {
            market: &self.market,
            preferences: &self.preferences,
            features: self.feature_map(cfg),
            heads: self.head_config(cfg),
        }
    }

    pub fn projector(&self, ablation: Ablation) -> ControlProjector {
        ControlProjector {
            portfolio: self.constraint,
            consumption: ConsumptionBounds::new(self.preferences.consumption_cap),
            project_portfolio: ablation != Ablation::SoftPenalty,
        }
    }

    /// Floor applied in simulation under `ablation`.
    pub fn floor(&self, ablation: Ablation) -> f64 {
        let floor = self.market.params().wealth_floor;
        if ablation == Ablation::NoFloor {
            GUARD_FRACTION * floor
        } else {
            floor
        }
    }

    pub fn fresh_networks(&self, cfg: &TrainConfig, seed: u64) -> Result<NetworkTriple> {
        NetworkTriple::new(cfg.network.spec(), self.market.n_assets(), seed)
    }
}

/// Network policy: raw controls from the policy head.
#[derive(Clone, Copy, Debug)]
pub struct NeuralPolicy<'a>(pub Heads<'a>);

impl<'a> Policy for NeuralPolicy<'a> {
    fn n_assets(&self) -> usize {
        self.0.nets.n_assets()
    }

    fn raw_controls(&self, t: &[f64], wealth: &[f64], factor: &[f64]) -> Result<Matrix> {
        Ok(self.0.raw_controls(t, wealth, factor))
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRow {
    pub iteration: usize,
    pub value_loss: f64,
    pub adjoint_loss: f64,
    pub actor_objective: f64,
    pub portfolio_binding_rate: f64,
    pub consumption_binding_rate: f64,
    pub floor_hit_rate: f64,
    pub raw_distance: f64,
    /// Simulated states below the configured floor (nonzero only without
    /// the floor).
    pub floor_violations: usize,
    /// Value-loss points excluded for leaving the aggregator domain.
    pub domain_violations: usize,
}

/// Owns the networks during training.
pub struct Trainer<'a> {
    problem: &'a Problem,
    cfg: TrainConfig,
    seed: u64,
    nets: NetworkTriple,
    sampler: Stream,
    log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    /// Fresh networks from `seed`, or `warm_start` parameters with reset
    /// optimizer state.
    pub fn new(problem: &'a Problem, cfg: TrainConfig, seed: u64, warm_start: Option<NetworkTriple>) -> Result<Self> {
        cfg.validate()?;
        let fresh = problem.fresh_networks(&cfg, seed)?;
        let nets = match warm_start {
            None => fresh,
            Some(w) => {
                if w.value.spec() != fresh.value.spec()
                    || w.costate.spec() != fresh.costate.spec()
                    || w.policy.spec() != fresh.policy.spec()
                {
                    return Err(Error::Incompatible(alloc::format!(
                        "warm start networks {:?} do not match the configured {:?}",
                        w.policy.spec(),
                        fresh.policy.spec()
                    )));
                }
                NetworkTriple { value_adam: fresh.value_adam, costate_adam: fresh.costate_adam, policy_adam: fresh.policy_adam, ..w }
            }
        };
        Ok(Trainer { problem, cfg, seed, nets, sampler: Stream::new(derive_seed(seed, tag::SUBSAMPLE)), log: Vec::new() })
    }

    pub fn networks(&self) -> &NetworkTriple {
        &self.nets
    }

    pub fn into_networks(self) -> NetworkTriple {
        self.nets
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.log.len()
    }

    fn actor_settings(&self) -> ActorSettings {
        let ab = self.cfg.ablation;
        ActorSettings {
            curvature: self.cfg.actor_curvature,
            source: if ab == Ablation::ValueOnly { CostateSource::ValueGradient } else { CostateSource::Network },
            constraint: self.problem.constraint,
            consumption: ConsumptionBounds::new(self.problem.preferences.consumption_cap),
            project_portfolio: ab != Ablation::SoftPenalty,
            rule: self.cfg.projection_gradient,
            weights: self.cfg.weights,
        }
    }

    /// Simulation settings for iteration `it`.
    pub fn sim_config(&self, it: usize) -> SimConfig {
        SimConfig {
            steps: self.cfg.steps,
            paths: self.cfg.batch,
            floor: self.problem.floor(self.cfg.ablation),
            init: self.cfg.init,
            seed: derive_seed(derive_seed(self.seed, tag::SIMULATION), it as u64),
            chunk: self.cfg.chunk,
        }
    }

    fn sample(&mut self, batch: &PathBatch, count: usize, include_terminal: bool) -> Vec<Point> {
        let steps = if include_terminal { batch.steps + 1 } else { batch.steps };
        if count == 0 {
            return (0..steps).flat_map(|k| (0..batch.paths).map(move |m| (k, m))).collect();
        }
        (0..count).map(|_| (self.sampler.index(steps), self.sampler.index(batch.paths))).collect()
    }

    /// Simulates one batch under the current policy.
    pub fn simulate<E: Executor>(&self, it: usize, executor: &E) -> Result<PathBatch> {
        let ctx = self.problem.context(&self.cfg);
        let policy = NeuralPolicy(ctx.heads(&self.nets));
        simulate_batch(&policy, &self.problem.market, &self.problem.projector(self.cfg.ablation), &self.sim_config(it), executor)
    }

    /// One critic step and one actor step.
    pub fn iterate<E: Executor>(&mut self, executor: &E) -> Result<LogRow> {
        let it = self.log.len();
        let batch = self.simulate(it, executor)?;
        let diag = batch.diagnostics()?;
        let floor_violations = batch.count_below(self.problem.market.params().wealth_floor);
        let ctx = self.problem.context(&self.cfg);
        let ab = self.cfg.ablation;

        // critic
        let value_points = self.sample(&batch, self.cfg.value_points, false);
        let costate_points = self.sample(&batch, self.cfg.costate_points, true);
        let mut tape = Tape::new();
        let value = self.nets.value.bind(&mut tape);
        let costate = self.nets.costate.bind(&mut tape);
        let (lval, domain_violations) = value_loss_on_tape(&mut tape, &value, &ctx, &batch, &value_points)?;
        let ladj = adjoint_loss_on_tape(&mut tape, &value, &costate, &ctx, &batch, &costate_points);
        let (value_loss, adjoint_loss) = (tape.scalar(lval), tape.scalar(ladj));
        if !value_loss.is_finite() {
            return Err(Error::Diverged { iteration: it, what: "value loss" });
        }
        if !adjoint_loss.is_finite() {
            return Err(Error::Diverged { iteration: it, what: "adjoint loss" });
        }
        let critic = match ab {
            Ablation::AdjointOnly => ladj,
            Ablation::ValueOnly => lval,
            _ => {
                let weighted = tape.scale(ladj, self.cfg.weights.adjoint);
                tape.add(lval, weighted)
            }
        };
        let grads = tape.backward(critic, Matrix::scalar(1.0));
        let gv = value.gradient(&tape, &grads);
        let gc = costate.gradient(&tape, &grads);
        drop(tape);
        let mut pv = self.nets.value.params();
        adam_step(&mut pv, &gv, &mut self.nets.value_adam, &self.cfg.value_adam)?;
        self.nets.value.set_params(&pv)?;
        if ab != Ablation::ValueOnly {
            let mut pc = self.nets.costate.params();
            adam_step(&mut pc, &gc, &mut self.nets.costate_adam, &self.cfg.costate_adam)?;
            self.nets.costate.set_params(&pc)?;
        }

        // actor
        let actor_points = self.sample(&batch, self.cfg.costate_points, false);
        let (t, w, y) = gather(&batch, &actor_points, 0);
        let settings = self.actor_settings();
        let eval = actor_objective_at(&self.nets, &ctx, &settings, &t, &w, &y, true)?;
        if !eval.objective.is_finite() {
            return Err(Error::Diverged { iteration: it, what: "actor objective" });
        }
        let descent: Vec<f64> = eval.gradient.iter().map(|g| -g).collect();
        let mut pp = self.nets.policy.params();
        adam_step(&mut pp, &descent, &mut self.nets.policy_adam, &self.cfg.policy_adam)?;
        self.nets.policy.set_params(&pp)?;
        if !self.nets.params_finite() {
            return Err(Error::Diverged { iteration: it, what: "network parameters" });
        }

        let row = LogRow {
            iteration: it,
            value_loss,
            adjoint_loss,
            actor_objective: eval.objective,
            portfolio_binding_rate: diag.portfolio_binding_rate,
            consumption_binding_rate: diag.consumption_binding_rate,
            floor_hit_rate: diag.floor_hit_rate,
            raw_distance: diag.mean_relative_projection_distance,
            floor_violations,
            domain_violations,
        };
        self.log.push(row);
        Ok(row)
    }

    /// True once window-averaged losses have stopped moving, or the
    /// iteration cap is reached.
    pub fn should_stop(&self) -> bool {
        let n = self.log.len();
        if n >= self.cfg.iterations {
            return true;
        }
        let w = self.cfg.stop_window;
        if self.cfg.stop_tolerance <= 0.0 || n < 2 * w {
            return false;
        }
        let window_mean = |from: usize, f: fn(&LogRow) -> f64| {
            math::mean(&self.log[from..from + w].iter().map(f).collect::<Vec<f64>>())
        };
        let fields: [fn(&LogRow) -> f64; 3] = [|r| r.value_loss, |r| r.adjoint_loss, |r| r.actor_objective];
        fields.iter().all(|&f| {
            let recent = window_mean(n - w, f);
            let before = window_mean(n - 2 * w, f);
            (recent - before).abs() <= self.cfg.stop_tolerance * before.abs().max(1e-12)
        })
    }

    /// Iterates until [`Trainer::should_stop`]; `observe` sees every log row.
    pub fn run<E: Executor>(
        &mut self,
        executor: &E,
        mut observe: impl FnMut(&LogRow, &NetworkTriple) -> Result<()>,
    ) -> Result<()> {
        while !self.should_stop() {
            let row = self.iterate(executor)?;
            observe(&row, &self.nets)?;
        }
        Ok(())
    }
}

/// Trains from scratch (or a warm start) with the sequential executor.
pub fn train(
    problem: &Problem,
    cfg: TrainConfig,
    seed: u64,
    warm_start: Option<NetworkTriple>,
) -> Result<(NetworkTriple, Vec<LogRow>)> {
    let mut trainer = Trainer::new(problem, cfg, seed, warm_start)?;
    trainer.run(&crate::simulate::Sequential, |_, _| Ok(()))?;
    let log = trainer.log.clone();
    Ok((trainer.into_networks(), log))
}
