//! Certainty equivalents, direct Monte Carlo of the time-additive objective
//! and policy evaluation of the recursive value.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::market::{InitialStateSampler, Market};
use crate::math;
use crate::nn::{adam_step, AdamConfig, Tape};
use crate::pgdpo::{value_loss_on_tape, NetworkConfig, Problem, TrainConfig};
use crate::preferences::{bequest_utility, crra_utility, crra_utility_inverse, ez_aggregator};
use crate::rng::{derive_seed, tag, Stream};
use crate::simulate::{simulate_batch, simulate_outcomes, ControlProjector, Executor, Policy, SimConfig};

/// `int_0^T e^{-delta t} dt + kappa e^{-delta T}`.
pub fn annuity_factor(discount: f64, bequest_weight: f64, horizon: f64) -> f64 {
    let running = if discount == 0.0 { horizon } else { -math::exp_m1(-discount * horizon) / discount };
    running + bequest_weight * math::exp(-discount * horizon)
}

/// `((1-R) V0)^(1/(1-R))`.
pub fn ez_certainty_equivalent(value: f64, risk_aversion: f64) -> Result<f64> {
    let e = 1.0 - risk_aversion;
    if e == 0.0 {
        return Ok(math::exp(value));
    }
    if !(e * value > 0.0) {
        return Err(invalid("value", "certainty equivalent needs (1-R) V > 0"));
    }
    Ok(math::powf(e * value, 1.0 / e))
}

/// Constant consumption that reproduces the time-additive objective `J0`:
/// `u^{-1}(J0 / A(T))`.
pub fn crra_certainty_equivalent(
    objective: f64,
    risk_aversion: f64,
    discount: f64,
    bequest_weight: f64,
    horizon: f64,
) -> Result<f64> {
    let per_unit = objective / annuity_factor(discount, bequest_weight, horizon);
    if risk_aversion != 1.0 && !((1.0 - risk_aversion) * per_unit > 0.0) {
        return Err(invalid("objective", "certainty equivalent needs (1-R) J > 0"));
    }
    Ok(crra_utility_inverse(per_unit, risk_aversion))
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Estimate {
        let n = xs.len();
        let se = if n > 1 { math::std_dev(xs) / math::sqrt(n as f64) } else { 0.0 };
        Estimate { value: math::mean(xs), standard_error: se, samples: n }
    }
}

/// Time-additive objective of a policy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrraObjective {
    pub risk_aversion: f64,
    pub discount: f64,
    pub bequest_weight: f64,
}

/// Direct Monte Carlo of
/// `E[ int e^{-delta t} u(c) dt + kappa e^{-delta T} u(W_T) ]`
/// (left-point rule on the simulation grid).
pub fn crra_objective_mc<P: Policy + ?Sized, E: Executor>(
    policy: &P,
    market: &Market,
    projector: &ControlProjector,
    sim: &SimConfig,
    objective: &CrraObjective,
    executor: &E,
) -> Result<Estimate> {
    let summary = simulate_outcomes(
        policy,
        market,
        projector,
        sim,
        objective.discount,
        objective.risk_aversion,
        sim.floor,
        executor,
    )?;
    let weight = objective.bequest_weight * math::exp(-objective.discount * market.params().horizon);
    let per_path = summary
        .outcomes
        .iter()
        .map(|o| Ok(o.discounted_utility + weight * crra_utility(o.terminal_wealth, objective.risk_aversion)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::of(&per_path))
}

/// Settings of the value-only retraining used to evaluate a fixed policy.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PolicyEvaluationConfig {
    pub iterations: usize,
    pub batch: usize,
    pub steps: usize,
    /// Random (path, step) pairs per value-loss evaluation; 0 uses all.
    pub value_points: usize,
    pub adam: AdamConfig,
    pub network: NetworkConfig,
    /// Starting wealth; every path starts at `(0, W0, Y_bar)`.
    pub initial_wealth: f64,
    /// Paths in the final batch used for the standard error.
    pub final_paths: usize,
    pub chunk: usize,
}

impl Default for PolicyEvaluationConfig {
    fn default() -> Self {
        PolicyEvaluationConfig {
            iterations: 500,
            batch: 256,
            steps: 128,
            value_points: 4096,
            adam: AdamConfig::with_rate(1e-3),
            network: NetworkConfig::default(),
            initial_wealth: 1.0,
            final_paths: 4096,
            chunk: 64,
        }
    }
}

impl PolicyEvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.final_paths < 2 || self.chunk == 0 {
            return Err(invalid("evaluation.policy", "steps, batch, chunk must be >= 1 and final_paths >= 2"));
        }
        if !(self.initial_wealth > 0.0) {
            return Err(invalid("evaluation.policy.initial_wealth", "must be > 0"));
        }
        self.adam.validate()?;
        self.network.spec().validate()
    }
}

/// Value of a frozen policy at `(0, W0, Y_bar)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValueEstimate {
    /// Network value at the starting state.
    pub value: f64,
    /// Standard error of the path-wise recursion estimate.
    pub standard_error: f64,
    /// Mean path-wise estimate minus the network value: the summed BSDE
    /// residual along paths.
    pub bias: f64,
    pub final_loss: f64,
    /// False when the bias exceeds three standard errors (plus a relative
    /// allowance of 1e-3 for noiseless policies).
    pub converged: bool,
}

/// Trains a fresh value network on the value loss alone with `policy` held
/// fixed, then reports the network value at the start state. Along a final
/// batch, `U(W_N) + sum_k f(c_k, V(t_k, X_k)) dt` is an unbiased path-wise
/// estimate of `V(0)` when the network solves the recursion, which gives the
/// standard error and a convergence check.
pub fn evaluate_ez_value<P: Policy + ?Sized, E: Executor>(
    policy: &P,
    problem: &Problem,
    cfg: &PolicyEvaluationConfig,
    seed: u64,
    executor: &E,
) -> Result<ValueEstimate> {
    cfg.validate()?;
    let train_cfg = TrainConfig { network: cfg.network, steps: cfg.steps, batch: cfg.batch, ..TrainConfig::default() };
    let ctx = problem.context(&train_cfg);
    let mut nets = problem.fresh_networks(&train_cfg, derive_seed(seed, tag::EVALUATION))?;
    let projector = problem.projector(crate::pgdpo::Ablation::Full);
    let p = problem.market.params();
    let init = InitialStateSampler { wealth_low: cfg.initial_wealth, wealth_high: cfg.initial_wealth, factor_truncation_sd: 0.0 };
    let sim = |paths: usize, s: u64| SimConfig { steps: cfg.steps, paths, floor: p.wealth_floor, init, seed: s, chunk: cfg.chunk };
    let sim_seed = derive_seed(derive_seed(seed, tag::EVALUATION), tag::SIMULATION);
    let mut sampler = Stream::new(derive_seed(derive_seed(seed, tag::EVALUATION), tag::SUBSAMPLE));
    let mut final_loss = f64::NAN;
    for it in 0..cfg.iterations {
        let batch = simulate_batch(policy, &problem.market, &projector, &sim(cfg.batch, derive_seed(sim_seed, it as u64)), executor)?;
        let points: Vec<(usize, usize)> = if cfg.value_points == 0 {
            (0..batch.steps).flat_map(|k| (0..batch.paths).map(move |m| (k, m))).collect()
        } else {
            (0..cfg.value_points).map(|_| (sampler.index(batch.steps), sampler.index(batch.paths))).collect()
        };
        let mut tape = Tape::new();
        let value = nets.value.bind(&mut tape);
        let (loss, _) = value_loss_on_tape(&mut tape, &value, &ctx, &batch, &points)?;
        final_loss = tape.scalar(loss);
        if !final_loss.is_finite() {
            return Err(Error::Diverged { iteration: it, what: "policy-evaluation value loss" });
        }
        let grads = tape.backward(loss, crate::linalg::Matrix::scalar(1.0));
        let g = value.gradient(&tape, &grads);
        drop(tape);
        let mut params = nets.value.params();
        adam_step(&mut params, &g, &mut nets.value_adam, &cfg.adam)?;
        nets.value.set_params(&params)?;
    }

    let heads = ctx.heads(&nets);
    let value = heads.value(&[0.0], &[cfg.initial_wealth], &[p.factor_mean])[0];
    let batch = simulate_batch(policy, &problem.market, &projector, &sim(cfg.final_paths, derive_seed(sim_seed, u64::MAX)), executor)?;
    let n = batch.paths;
    let d = batch.n_assets;
    let mut per_path = alloc::vec![0.0; n];
    for k in 0..batch.steps {
        let states: Vec<_> = (0..n).map(|m| batch.state(k, m)).collect();
        let t: Vec<f64> = states.iter().map(|s| s.t).collect();
        let w: Vec<f64> = states.iter().map(|s| s.wealth).collect();
        let y: Vec<f64> = states.iter().map(|s| s.factor).collect();
        let v = heads.value(&t, &w, &y);
        for m in 0..n {
            let c = batch.projected_control(k, m)[d];
            per_path[m] += ez_aggregator(c, v[m], &problem.preferences)? * batch.dt;
        }
    }
    for (m, x) in per_path.iter_mut().enumerate() {
        *x += bequest_utility(batch.state(batch.steps, m).wealth, &problem.preferences)?;
    }
    let est = Estimate::of(&per_path);
    let bias = est.value - value;
    let converged = bias.abs() <= 3.0 * est.standard_error + 1e-3 * value.abs();
    Ok(ValueEstimate { value, standard_error: est.standard_error, bias, final_loss, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;
    use crate::pgdpo::Problem;
    use crate::preferences::EzParams;
    use crate::projection::PortfolioConstraint;
    use crate::simulate::{ConstantPolicy, Sequential};

    #[test]
    fn ez_ce_examples() {
        assert!((ez_certainty_equivalent(-2.0, 1.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(ez_certainty_equivalent(2.0, 1.5).is_err());
        let lo = ez_certainty_equivalent(-2.5, 1.5).unwrap();
        let hi = ez_certainty_equivalent(-1.5, 1.5).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn constant_consumption_is_its_own_certainty_equivalent() {
        let (r, delta, kappa, horizon) = (1.5, 0.03, 33.0, 1.5);
        let c: f64 = 0.8;
        let j = crra_utility(c, r).unwrap() * annuity_factor(delta, kappa, horizon);
        let ce = crra_certainty_equivalent(j, r, delta, kappa, horizon).unwrap();
        assert!((ce - c).abs() < 1e-12);
        assert!((annuity_factor(0.0, 1.0, 2.0) - 3.0).abs() < 1e-15);
    }

    fn riskless_problem(eis: f64) -> Problem {
        let market = Market::new(MarketParams::single_asset(0.10, 0.20, 0.02, 1.5)).unwrap();
        let ez = EzParams { eis, ..EzParams::default() };
        Problem::new(market, ez, PortfolioConstraint::capped(2.0)).unwrap()
    }

    fn small_cfg() -> PolicyEvaluationConfig {
        let mut cfg = PolicyEvaluationConfig {
            iterations: 400,
            batch: 32,
            steps: 32,
            value_points: 0,
            final_paths: 64,
            ..PolicyEvaluationConfig::default()
        };
        cfg.network.hidden_width = 16;
        cfg.network.hidden_layers = 2;
        cfg.adam = AdamConfig::with_rate(3e-3);
        cfg
    }

    #[test]
    fn riskless_policy_value_matches_direct_recursion() {
        let problem = riskless_problem(1.0 / 1.5);
        let cfg = small_cfg();
        let policy = ConstantPolicy { weights: alloc::vec![0.0], consumption_ratio: 0.05 };
        let est = evaluate_ez_value(&policy, &problem, &cfg, 3, &Sequential).unwrap();

        // time-additive objective of the deterministic path, discretized as
        // the recursion V_k = V_{k+1} + delta (u(c_k) - V_k) dt
        let ez = problem.preferences;
        let dt = 1.5 / cfg.steps as f64;
        let mut w = alloc::vec![1.0];
        for _ in 0..cfg.steps {
            let last = *w.last().unwrap();
            w.push(last + (0.02 * last - 0.05 * last) * dt);
        }
        let mut v = bequest_utility(w[cfg.steps], &ez).unwrap();
        for k in (0..cfg.steps).rev() {
            v = (v + ez.discount * crra_utility(0.05 * w[k], 1.5).unwrap() * dt) / (1.0 + ez.discount * dt);
        }
        assert!((est.value - v).abs() < 2e-3 * v.abs(), "{est:?} vs {v}");
        assert!(est.converged, "{est:?}");

        // continuous-time direct expectation: V_EZ(0) = delta J with bequest kappa / delta
        let objective = CrraObjective { risk_aversion: 1.5, discount: ez.discount, bequest_weight: ez.bequest_weight / ez.discount };
        let sim = SimConfig {
            steps: cfg.steps,
            paths: 8,
            floor: 0.01,
            init: InitialStateSampler { wealth_low: 1.0, wealth_high: 1.0, factor_truncation_sd: 0.0 },
            seed: 1,
            chunk: 8,
        };
        let j = crra_objective_mc(&policy, &problem.market, &problem.projector(crate::pgdpo::Ablation::Full), &sim, &objective, &Sequential).unwrap();
        assert!(j.standard_error < 1e-12);
        assert!((ez.discount * j.value - v).abs() < 1e-3 * v.abs());
    }

    #[test]
    fn risky_policy_value_within_two_standard_errors_of_direct_expectation() {
        let problem = riskless_problem(1.0 / 1.5);
        let mut cfg = small_cfg();
        cfg.iterations = 1500;
        cfg.batch = 64;
        cfg.final_paths = 2048;
        let policy = ConstantPolicy { weights: alloc::vec![0.5], consumption_ratio: 0.05 };
        let est = evaluate_ez_value(&policy, &problem, &cfg, 4, &Sequential).unwrap();
        let ez = problem.preferences;
        let objective = CrraObjective { risk_aversion: 1.5, discount: ez.discount, bequest_weight: ez.bequest_weight / ez.discount };
        let sim = SimConfig {
            steps: cfg.steps,
            paths: 20_000,
            floor: 0.01,
            init: InitialStateSampler { wealth_low: 1.0, wealth_high: 1.0, factor_truncation_sd: 0.0 },
            seed: 77,
            chunk: 256,
        };
        let j = crra_objective_mc(&policy, &problem.market, &problem.projector(crate::pgdpo::Ablation::Full), &sim, &objective, &Sequential).unwrap();
        let direct = ez.discount * j.value;
        let se = (est.standard_error.powi(2) + (ez.discount * j.standard_error).powi(2)).sqrt();
        // the recursion and the left-point sum differ at O(dt)
        let discretization = 1e-3 * direct.abs();
        assert!((est.value - direct).abs() < 2.0 * se + discretization, "{est:?} vs {direct} (se {se})");
    }
}
