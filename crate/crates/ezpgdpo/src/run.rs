//! Command implementations: training, evaluation, Merton validation, seed
//! studies and ablations. Each command writes into a fresh run directory
//! and finishes with a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ezpgdpo_core::analytic::{merton_consumption_fraction, merton_weight, MertonParams};
use ezpgdpo_core::evaluation::{
    cross_sectional_regressions, ez_certainty_equivalent, crra_certainty_equivalent, evaluate_ez_value, held_controls,
    hedging_surfaces, hjb_residual_crra, mean_hedging_by_asset, merton_validation, rank_agreement, terminal_gap,
    terminal_wealth_stats, AssetHedging, Characteristic, CharacteristicRegression, Estimate, HedgingSurface, MeanSd,
    MertonSurface, MertonValidation, NetworkSurface, StateBand, StateGrid, ValidationGrid, ValueEstimate, ValueSurface,
    WealthStats,
};
use ezpgdpo_core::market::InitialStateSampler;
use ezpgdpo_core::nn::{Heads, NetworkTriple};
use ezpgdpo_core::pgdpo::{Ablation, LogRow, NeuralPolicy, Problem, Trainer};
use ezpgdpo_core::preferences::crra_utility;
use ezpgdpo_core::rng::{derive_seed, tag};
use ezpgdpo_core::simulate::{simulate_outcomes, MertonPolicy, MyopicPolicy, OutcomeSummary, Policy, SimConfig};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::AppResult;
use crate::executor::Threaded;
use crate::output::{write_manifest, Cell, Clock, RunDir, Schema};
use crate::row;

/// Training-log rows averaged for the final diagnostics.
pub const FINAL_WINDOW: usize = 50;

/// Checkpoint file written at the end of training.
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";

pub fn executor(cfg: &RunConfig) -> Threaded {
    Threaded { threads: cfg.effective_threads() }
}

/// Myopic benchmark for a problem. Consumption follows the closed form with
/// the bequest weight in its time-additive units.
pub fn myopic_policy(problem: &Problem) -> AppResult<MyopicPolicy> {
    let ez = &problem.preferences;
    Ok(MyopicPolicy::new(
        problem.market.clone(),
        ez.risk_aversion,
        ez.discount,
        ez.bequest_weight / ez.discount,
        &problem.constraint,
    )?)
}

/// Training-log averages over the last [`FINAL_WINDOW`] iterations, plus
/// totals of the violation counters.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct FinalDiagnostics {
    pub iterations: usize,
    pub window: usize,
    pub value_loss: f64,
    pub adjoint_loss: f64,
    pub actor_objective: f64,
    pub portfolio_binding_rate: f64,
    pub consumption_binding_rate: f64,
    pub floor_hit_rate: f64,
    /// Relative distance of the raw policy output from the portfolio set.
    pub raw_distance: f64,
    /// Relative distance of the weights actually held from the set: zero
    /// when projecting, the raw distance otherwise.
    pub executed_distance: f64,
    pub floor_violations: usize,
    pub domain_violations: usize,
}

impl FinalDiagnostics {
    pub fn of(log: &[LogRow], projecting: bool) -> FinalDiagnostics {
        let n = log.len();
        if n == 0 {
            return FinalDiagnostics::default();
        }
        let tail = &log[n - n.min(FINAL_WINDOW)..];
        let mean = |f: fn(&LogRow) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
        let raw = mean(|r| r.raw_distance);
        FinalDiagnostics {
            iterations: n,
            window: tail.len(),
            value_loss: mean(|r| r.value_loss),
            adjoint_loss: mean(|r| r.adjoint_loss),
            actor_objective: mean(|r| r.actor_objective),
            portfolio_binding_rate: mean(|r| r.portfolio_binding_rate),
            consumption_binding_rate: mean(|r| r.consumption_binding_rate),
            floor_hit_rate: mean(|r| r.floor_hit_rate),
            raw_distance: raw,
            executed_distance: if projecting { 0.0 } else { raw },
            floor_violations: log.iter().map(|r| r.floor_violations).sum(),
            domain_violations: log.iter().map(|r| r.domain_violations).sum(),
        }
    }
}

pub struct Trained {
    pub nets: NetworkTriple,
    pub log: Vec<LogRow>,
    pub diagnostics: FinalDiagnostics,
}

fn training_log_schema() -> Schema {
    Schema::new(
        "training_log",
        "One row per training iteration.",
        &[
            ("iteration", "zero-based iteration"),
            ("value_loss", "mean squared one-step recursion residual"),
            ("adjoint_loss", "weighted costate regression loss"),
            ("actor_objective", "mean augmented Hamiltonian at the sampled states"),
            ("portfolio_binding_rate", "share of steps with an active portfolio constraint"),
            ("consumption_binding_rate", "share of steps with consumption clipped to a bound"),
            ("floor_hit_rate", "share of steps where the wealth floor was applied"),
            ("raw_distance", "mean |raw - projected| / (1 + |raw|) of the portfolio weights"),
            ("floor_violations", "simulated states below the configured floor"),
            ("domain_violations", "value-loss points outside the aggregator domain"),
            ("wall_clock_seconds", "elapsed seconds since training start; 0 in reference mode"),
        ],
    )
}

/// Trains with `cfg` and writes `<prefix>training_log.csv` and checkpoints.
pub fn train_into(
    dir: &mut RunDir,
    cfg: &RunConfig,
    seed: u64,
    warm: Option<NetworkTriple>,
    prefix: &str,
) -> AppResult<Trained> {
    let problem = cfg.problem()?;
    let exec = executor(cfg);
    let mut trainer = Trainer::new(&problem, cfg.training, seed, warm)?;
    let start = Instant::now();
    let reference = cfg.run.reference_mode;
    let every = cfg.io.checkpoint_every;
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let network = cfg.training.network;
    while !trainer.should_stop() {
        let r = trainer.iterate(&exec)?;
        let wall = if reference { 0.0 } else { start.elapsed().as_secs_f64() };
        rows.push(row![
            r.iteration,
            r.value_loss,
            r.adjoint_loss,
            r.actor_objective,
            r.portfolio_binding_rate,
            r.consumption_binding_rate,
            r.floor_hit_rate,
            r.raw_distance,
            r.floor_violations,
            r.domain_violations,
            wall
        ]);
        if every > 0 && (r.iteration + 1) % every == 0 {
            let ck = Checkpoint { iteration: r.iteration + 1, seed, network, nets: trainer.networks().clone() };
            let p = dir.file(&format!("{prefix}checkpoint-{:06}.txt", r.iteration + 1));
            ck.save(&p)?;
            dir.track(p);
        }
    }
    dir.write_table(&format!("{prefix}training_log"), &training_log_schema(), &rows)?;
    let ck = Checkpoint { iteration: trainer.iteration(), seed, network, nets: trainer.networks().clone() };
    let ck_path = dir.file(&format!("{prefix}{CHECKPOINT_FILE}"));
    ck.save(&ck_path)?;
    dir.track(ck_path);
    if cfg.io.export_paths {
        let batch = trainer.simulate(trainer.iteration(), &exec)?;
        write_paths(dir, &format!("{prefix}paths"), &batch)?;
    }
    let log = trainer.log().to_vec();
    let diagnostics = FinalDiagnostics::of(&log, problem.projector(cfg.training.ablation).project_portfolio);
    Ok(Trained { nets: trainer.into_networks(), log, diagnostics })
}

fn write_paths(dir: &mut RunDir, name: &str, b: &ezpgdpo_core::simulate::PathBatch) -> AppResult<()> {
    let d = b.n_assets;
    let mut schema = Schema::new(
        "paths",
        "One row per (path, step) of a simulated training batch.",
        &[("path", "path index"), ("step", "time step"), ("t", "time"), ("wealth", "wealth before the step"), ("factor", "factor level")],
    );
    for i in 1..=d {
        schema.push(format!("weight_{i}"), format!("held weight of asset {i}"));
    }
    schema.push("consumption", "held consumption rate");
    for i in 1..=d {
        schema.push(format!("raw_weight_{i}"), format!("raw policy weight of asset {i}"));
    }
    schema.push("raw_consumption", "raw policy consumption rate");
    schema.push("portfolio_active", "1 if the portfolio constraint bound");
    schema.push("consumption_active", "1 if consumption was clipped");
    schema.push("floor_hit", "1 if the floor was applied after the step");
    let mut rows = Vec::with_capacity(b.paths * b.steps);
    for m in 0..b.paths {
        for k in 0..b.steps {
            let s = b.state(k, m);
            let i = k * b.paths + m;
            let mut r = row![m, k, s.t, s.wealth, s.factor];
            r.extend(b.projected_control(k, m).iter().map(|&x| Cell::F(x)));
            r.extend(b.raw_control(k, m).iter().map(|&x| Cell::F(x)));
            r.extend(row![b.portfolio_active[i], b.consumption_active[i], b.floor_hit[i]]);
            rows.push(r);
        }
    }
    dir.write_table(name, &schema, &rows)?;
    Ok(())
}

/// Starting networks: a checkpoint if given, otherwise a time-additive
/// pre-training run when `run.warm_start` is set.
pub fn warm_start(dir: &mut RunDir, cfg: &RunConfig, seed: u64, checkpoint: Option<&Path>) -> AppResult<Option<NetworkTriple>> {
    if let Some(p) = checkpoint {
        let ck = Checkpoint::load(p)?;
        ck.check_compatible(&cfg.training.network, cfg.market.n_assets(), p)?;
        return Ok(Some(ck.nets));
    }
    if cfg.run.warm_start && !cfg.preferences.is_crra_limit() {
        let trained = train_into(dir, &cfg.crra_limit(), seed, None, "warmstart_")?;
        return Ok(Some(trained.nets));
    }
    Ok(None)
}

/// Simulation at a fixed start `(0, W0, Y_bar)` for evaluation.
fn evaluation_sim(cfg: &RunConfig, problem: &Problem, seed: u64) -> SimConfig {
    SimConfig {
        steps: cfg.evaluation_steps(),
        paths: cfg.evaluation.paths,
        floor: problem.floor(cfg.training.ablation),
        init: InitialStateSampler {
            wealth_low: cfg.evaluation.initial_wealth,
            wealth_high: cfg.evaluation.initial_wealth,
            factor_truncation_sd: 0.0,
        },
        seed: derive_seed(seed, tag::EVALUATION),
        chunk: cfg.training.chunk,
    }
}

/// Welfare of one policy.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Welfare {
    pub ez_value: Option<ValueEstimate>,
    pub ez_certainty_equivalent: Option<f64>,
    /// Time-additive objective with the same `R`, `delta` and `kappa`.
    pub crra_objective: Estimate,
    pub crra_certainty_equivalent: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyOutcome {
    pub welfare: Welfare,
    pub terminal_wealth: WealthStats,
    pub below_floor: usize,
    pub portfolio_binding_rate: f64,
    pub consumption_binding_rate: f64,
    pub floor_hit_rate: f64,
    pub raw_distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HedgingSummary {
    pub t: f64,
    pub grid_points: usize,
    pub extrapolated: usize,
    pub by_asset: Vec<AssetHedging>,
    pub rank_agreement: f64,
    pub regressions: Vec<CharacteristicRegression>,
    /// Characteristics whose slope has the expected sign.
    pub signs_matching: usize,
}

impl HedgingSummary {
    pub fn all_signs_match(&self) -> bool {
        self.signs_matching == self.regressions.len()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvaluationSummary {
    pub seed: u64,
    pub ablation: &'static str,
    pub ce_convention: &'static str,
    pub policy: PolicyOutcome,
    pub myopic: PolicyOutcome,
    pub hedging: HedgingSummary,
    pub merton: Option<MertonReport>,
}

const CE_CONVENTION: &str = "ez_ce = ((1-R) V0)^(1/(1-R)); crra_ce = u^-1(J0 / A(T)) with A(T) = (1 - exp(-delta T))/delta + kappa exp(-delta T); J0 by direct Monte Carlo from (0, W0, Y_bar)";

fn outcome_of<P: Policy>(
    policy: &P,
    problem: &Problem,
    cfg: &RunConfig,
    seed: u64,
    summary: &OutcomeSummary,
) -> AppResult<PolicyOutcome> {
    let ez = &problem.preferences;
    let horizon = problem.market.params().horizon;
    let bequest = ez.bequest_weight * (-ez.discount * horizon).exp();
    let per_path = summary
        .outcomes
        .iter()
        .map(|o| Ok(o.discounted_utility + bequest * crra_utility(o.terminal_wealth, ez.risk_aversion)?))
        .collect::<Result<Vec<f64>, ezpgdpo_core::Error>>()?;
    let crra_objective = Estimate::of(&per_path);
    let crra_ce = crra_certainty_equivalent(crra_objective.value, ez.risk_aversion, ez.discount, ez.bequest_weight, horizon)?;
    let (ez_value, ez_ce) = if cfg.evaluation.policy_value {
        let mut pe = cfg.evaluation.policy_evaluation;
        pe.initial_wealth = cfg.evaluation.initial_wealth;
        let v = evaluate_ez_value(policy, problem, &pe, seed, &executor(cfg))?;
        if !v.converged {
            eprintln!("warning: policy evaluation did not converge (bias {:.3e}, se {:.3e})", v.bias, v.standard_error);
        }
        (Some(v), Some(ez_certainty_equivalent(v.value, ez.risk_aversion)?))
    } else {
        (None, None)
    };
    let terminal: Vec<f64> = summary.outcomes.iter().map(|o| o.terminal_wealth).collect();
    let diag = summary.diagnostics.finish()?;
    Ok(PolicyOutcome {
        welfare: Welfare { ez_value, ez_certainty_equivalent: ez_ce, crra_objective, crra_certainty_equivalent: crra_ce },
        terminal_wealth: terminal_wealth_stats(&terminal)?,
        below_floor: summary.below_floor,
        portfolio_binding_rate: diag.portfolio_binding_rate,
        consumption_binding_rate: diag.consumption_binding_rate,
        floor_hit_rate: diag.floor_hit_rate,
        raw_distance: diag.mean_relative_projection_distance,
    })
}

/// Cross-section grid at mid-horizon: wealth `1 +- W_max/2`, factor within
/// two stationary standard deviations.
pub fn hedging_grid(cfg: &RunConfig) -> StateGrid {
    let p = &cfg.market;
    let half = 0.5 * p.wealth_band_max;
    let sd = p.factor_stationary_sd();
    StateGrid::uniform(
        0.5 * p.horizon,
        (1.0 - half, 1.0 + half),
        (p.factor_mean - 2.0 * sd, p.factor_mean + 2.0 * sd),
        cfg.evaluation.hedging_wealth_points,
        cfg.evaluation.hedging_factor_points,
    )
}

/// Hedging decomposition and regressions without writing files.
pub fn hedging_analysis(cfg: &RunConfig, nets: &NetworkTriple, seed: u64) -> AppResult<(HedgingSurface, HedgingSummary)> {
    let problem = cfg.problem()?;
    let ctx = problem.context(&cfg.training);
    let policy = NeuralPolicy(ctx.heads(nets));
    let myopic = myopic_policy(&problem)?;
    let projector = problem.projector(cfg.training.ablation);
    let grid = hedging_grid(cfg);
    let band = StateBand::of_market(&cfg.market, cfg.training.init.factor_truncation_sd);
    let surface = hedging_surfaces(&policy, &myopic, &projector, &grid, &band, cfg.evaluation.factor_slopes)?;
    if surface.extrapolated > 0 {
        eprintln!("warning: {} of {} hedging grid points lie outside the training band", surface.extrapolated, grid.len());
    }
    let by_asset = mean_hedging_by_asset(&surface);
    let agreement = if by_asset.len() > 1 { rank_agreement(&by_asset)? } else { f64::NAN };
    let regressions = if problem.market.n_assets() > 1 {
        cross_sectional_regressions(&surface, &problem.market, cfg.evaluation.bootstrap, derive_seed(seed, tag::BOOTSTRAP))?
    } else {
        Vec::new()
    };
    let signs_matching = regressions
        .iter()
        .filter(|r| r.result.slope * r.characteristic.expected_sign() > 0.0)
        .count();
    let summary = HedgingSummary {
        t: surface.t,
        grid_points: grid.len(),
        extrapolated: surface.extrapolated,
        by_asset,
        rank_agreement: agreement,
        regressions,
        signs_matching,
    };
    Ok((surface, summary))
}

/// Every evaluation artifact for trained networks.
pub fn evaluate_into(dir: &mut RunDir, cfg: &RunConfig, nets: &NetworkTriple, seed: u64) -> AppResult<EvaluationSummary> {
    let problem = cfg.problem()?;
    let exec = executor(cfg);
    let ctx = problem.context(&cfg.training);
    let policy = NeuralPolicy(ctx.heads(nets));
    let myopic = myopic_policy(&problem)?;
    let projector = problem.projector(cfg.training.ablation);
    let sim = evaluation_sim(cfg, &problem, seed);
    let ez = &problem.preferences;
    let floor = cfg.market.wealth_floor;
    let run = |p: &dyn Policy| {
        simulate_outcomes(p, &problem.market, &projector, &sim, ez.discount, ez.risk_aversion, floor, &exec)
    };
    let learned = run(&policy)?;
    let bench = run(&myopic)?;
    let policy_outcome = outcome_of(&policy, &problem, cfg, seed, &learned)?;
    let myopic_outcome = outcome_of(&myopic, &problem, cfg, seed, &bench)?;

    let dt = cfg.market.horizon / sim.steps as f64;
    let mean_rows: Vec<Vec<Cell>> = (0..=sim.steps)
        .map(|k| {
            let ratio = |s: &OutcomeSummary| s.mean_consumption_ratio.get(k).copied().unwrap_or(f64::NAN);
            row![k, k as f64 * dt, learned.mean_wealth[k], bench.mean_wealth[k], ratio(&learned), ratio(&bench)]
        })
        .collect();
    dir.write_table(
        "mean_wealth",
        &Schema::new(
            "mean_wealth",
            "Cross-path mean wealth and consumption ratio under the learned and myopic policies.",
            &[
                ("step", "time step"),
                ("t", "time"),
                ("policy_mean_wealth", "learned policy"),
                ("myopic_mean_wealth", "myopic benchmark"),
                ("policy_consumption_ratio", "mean c/W over the step; empty at the terminal time"),
                ("myopic_consumption_ratio", "mean c/W over the step; empty at the terminal time"),
            ],
        ),
        &mean_rows,
    )?;

    let stats_row = |name: &str, s: &WealthStats| {
        row![name, s.count, s.mean, s.sd, s.skewness, s.excess_kurtosis, s.q05, s.q50, s.q95]
    };
    dir.write_table(
        "terminal_wealth",
        &Schema::new(
            "terminal_wealth",
            "Terminal-wealth distribution statistics.",
            &[
                ("policy", "learned or myopic"),
                ("count", "paths"),
                ("mean", "sample mean"),
                ("sd", "unbiased standard deviation"),
                ("skewness", "adjusted sample skewness"),
                ("excess_kurtosis", "unbiased excess kurtosis"),
                ("q05", "5% quantile"),
                ("q50", "median"),
                ("q95", "95% quantile"),
            ],
        ),
        &[stats_row("learned", &policy_outcome.terminal_wealth), stats_row("myopic", &myopic_outcome.terminal_wealth)],
    )?;

    let welfare_row = |name: &str, w: &Welfare| {
        let v = w.ez_value;
        row![
            name,
            v.map_or(f64::NAN, |v| v.value),
            v.map_or(f64::NAN, |v| v.standard_error),
            w.ez_certainty_equivalent.unwrap_or(f64::NAN),
            v.is_none_or(|v| v.converged),
            w.crra_objective.value,
            w.crra_objective.standard_error,
            w.crra_certainty_equivalent
        ]
    };
    dir.write_table(
        "welfare",
        &Schema::new(
            "welfare",
            CE_CONVENTION,
            &[
                ("policy", "learned or myopic"),
                ("ez_value", "recursive value at (0, W0, Y_bar) by value-only retraining; NaN when disabled"),
                ("ez_value_se", "standard error of the path-wise recursion estimate"),
                ("ez_ce", "EZ certainty equivalent"),
                ("ez_converged", "1 if the policy evaluation passed its bias check"),
                ("crra_objective", "time-additive objective J0 by direct Monte Carlo"),
                ("crra_objective_se", "standard error of J0"),
                ("crra_ce", "time-additive certainty equivalent"),
            ],
        ),
        &[welfare_row("learned", &policy_outcome.welfare), welfare_row("myopic", &myopic_outcome.welfare)],
    )?;

    let (surface, hedging) = hedging_analysis(cfg, nets, seed)?;
    write_hedging(dir, cfg, &surface, &hedging)?;

    let merton = match cfg.merton_params() {
        Ok(m) => Some(merton_report(dir, cfg, &ctx.heads(nets), &m, seed)?),
        Err(_) => None,
    };
    let summary = EvaluationSummary {
        seed,
        ablation: cfg.training.ablation.name(),
        ce_convention: CE_CONVENTION,
        policy: policy_outcome,
        myopic: myopic_outcome,
        hedging,
        merton,
    };
    dir.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn write_hedging(dir: &mut RunDir, cfg: &RunConfig, surface: &HedgingSurface, h: &HedgingSummary) -> AppResult<()> {
    let market = ezpgdpo_core::market::Market::new(cfg.market.clone())?;
    let rows: Vec<Vec<Cell>> = surface
        .points
        .iter()
        .map(|p| {
            row![
                surface.t,
                p.wealth,
                p.factor,
                p.asset + 1,
                p.policy_weight,
                p.myopic_weight,
                p.hedge,
                p.factor_slope.unwrap_or(f64::NAN)
            ]
        })
        .collect();
    dir.write_table(
        "surfaces",
        &Schema::new(
            "surfaces",
            "Policy, myopic and hedging weights; one row per grid point per asset.",
            &[
                ("t", "time"),
                ("wealth", "wealth"),
                ("factor", "factor level"),
                ("asset", "asset number, 1-based"),
                ("policy_weight", "held weight of the learned policy"),
                ("myopic_weight", "held weight of the myopic benchmark"),
                ("hedge", "policy_weight - myopic_weight"),
                ("factor_slope", "central difference of policy_weight in the factor; NaN when disabled"),
            ],
        ),
        &rows,
    )?;

    let chars = |a: usize| Characteristic::ALL.map(|c| c.of(&market, a));
    let rows: Vec<Vec<Cell>> = h
        .by_asset
        .iter()
        .map(|a| {
            let c = chars(a.asset);
            row![a.asset + 1, a.mean_abs_hedge, a.rank, c[0], c[1], c[2], c[3]]
        })
        .collect();
    let char_cols = [
        ("rho", "correlation of the asset return with the factor"),
        ("beta_lrr", "drift loading on the factor"),
        ("sharpe", "(mean return - r) / volatility"),
        ("sigma", "volatility"),
    ];
    let mut schema = Schema::new(
        "hedging_by_asset",
        "Grid-average absolute hedging demand per asset.",
        &[("asset", "asset number, 1-based"), ("mean_abs_hedge", "mean |hedge| over the grid"), ("rank", "1 = largest demand")],
    );
    for (n, d) in char_cols {
        schema.push(n, d);
    }
    dir.write_table("hedging_by_asset", &schema, &rows)?;

    let rows: Vec<Vec<Cell>> = surface
        .points
        .iter()
        .map(|p| {
            let c = chars(p.asset);
            row![p.asset + 1, p.wealth, p.factor, p.hedge.abs(), c[0], c[1], c[2], c[3]]
        })
        .collect();
    let mut schema = Schema::new(
        "characteristics",
        "Absolute hedging demand against asset characteristics; one row per (asset, grid point).",
        &[("asset", "asset number, 1-based"), ("wealth", "wealth"), ("factor", "factor level"), ("abs_hedge", "|hedge|")],
    );
    for (n, d) in char_cols {
        schema.push(n, d);
    }
    dir.write_table("characteristics", &schema, &rows)?;

    let rows: Vec<Vec<Cell>> = h
        .regressions
        .iter()
        .map(|r| {
            let x = &r.result;
            row![
                r.characteristic.name(),
                r.characteristic.expected_sign(),
                x.slope,
                x.intercept,
                x.standard_error,
                x.t_stat,
                x.r_squared,
                x.observations,
                x.replications,
                x.slope * r.characteristic.expected_sign() > 0.0
            ]
        })
        .collect();
    dir.write_table(
        "regression",
        &Schema::new(
            "regression",
            "Univariate OLS of |hedge| on each characteristic with pairs-bootstrap standard errors.",
            &[
                ("characteristic", "regressor"),
                ("expected_sign", "sign expected from hedging theory"),
                ("slope", "OLS slope"),
                ("intercept", "OLS intercept"),
                ("standard_error", "bootstrap standard error of the slope"),
                ("t_stat", "slope / standard_error"),
                ("r_squared", "coefficient of determination"),
                ("observations", "assets x grid points"),
                ("replications", "bootstrap replications"),
                ("sign_matches", "1 if the slope has the expected sign"),
            ],
        ),
        &rows,
    )?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MertonReport {
    pub validation: MertonValidation,
    pub residual_mean: f64,
    pub residual_sd: f64,
    pub residual_max_abs: f64,
    /// Maximum residual of the closed form itself on the same grid.
    pub exact_residual_max_abs: f64,
    /// Mean `|V(T - dt, W) - U(W)|` of the value network.
    pub terminal_gap: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Grid comparison against the closed form, HJB residuals and CE pair.
pub fn merton_report(
    dir: &mut RunDir,
    cfg: &RunConfig,
    heads: &Heads<'_>,
    merton: &MertonParams,
    seed: u64,
) -> AppResult<MertonReport> {
    let problem = cfg.problem()?;
    let policy = NeuralPolicy(*heads);
    let projector = problem.projector(Ablation::Full);
    let grid = ValidationGrid::standard(cfg.market.horizon, cfg.market.factor_mean);
    let mut sim = evaluation_sim(cfg, &problem, seed);
    sim.floor = cfg.market.wealth_floor;
    let v = merton_validation(&policy, &projector, &problem.market, merton, &grid, &sim, &executor(cfg))?;
    let surface = NetworkSurface { heads: *heads, factor: grid.factor, discount: cfg.preferences.discount };
    let residual = hjb_residual_crra(&surface, &policy, &projector, &grid, merton)?;
    let exact = hjb_residual_crra(&MertonSurface(*merton), &MertonPolicy(*merton), &projector, &grid, merton)?;
    let gap = terminal_gap(heads, &grid, cfg.market.horizon / cfg.training.steps as f64, &cfg.preferences)?;

    let (t, w) = grid.points();
    let y = vec![grid.factor; t.len()];
    let (weights, consumption) = held_controls(&policy, &projector, &t, &w, &y)?;
    let (learned_v, _) = surface.value_and_slope(&t, &w)?;
    let (exact_v, _) = MertonSurface(*merton).value_and_slope(&t, &w)?;
    let phi = merton_weight(merton);
    let rows: Vec<Vec<Cell>> = (0..t.len())
        .map(|i| {
            row![
                t[i],
                w[i],
                weights.get(i, 0),
                phi,
                consumption[i],
                merton_consumption_fraction(t[i], merton) * w[i],
                learned_v[i],
                exact_v[i],
                residual.residual[i]
            ]
        })
        .collect();
    dir.write_table(
        "validation_grid",
        &Schema::new(
            "validation_grid",
            "Learned policy and value against the closed form on the validation grid.",
            &[
                ("t", "time"),
                ("wealth", "wealth"),
                ("learned_weight", "held risky weight"),
                ("merton_weight", "closed-form weight"),
                ("learned_consumption", "held consumption rate"),
                ("merton_consumption", "closed-form consumption rate"),
                ("learned_value", "value network in time-additive units"),
                ("merton_value", "closed-form value"),
                ("hjb_residual", "generator of the learned value under the learned controls"),
            ],
        ),
        &rows,
    )?;

    let th = cfg.evaluation.thresholds;
    let checks = vec![
        Check {
            name: "err_amount",
            value: v.errors.amount,
            threshold: th.max_err_amount,
            pass: v.errors.amount <= th.max_err_amount,
        },
        Check {
            name: "err_consumption",
            value: v.errors.consumption,
            threshold: th.max_err_consumption,
            pass: v.errors.consumption <= th.max_err_consumption,
        },
        Check { name: "ce_gap", value: v.ce_gap, threshold: th.max_ce_gap, pass: v.ce_gap <= th.max_ce_gap },
        Check {
            name: "hjb_mean_over_sd",
            value: residual.mean.abs() / residual.sd,
            threshold: th.hjb_sd_multiple,
            pass: residual.mean.abs() <= th.hjb_sd_multiple * residual.sd,
        },
    ];
    let passed = checks.iter().all(|c| c.pass);
    let report = MertonReport {
        validation: v,
        residual_mean: residual.mean,
        residual_sd: residual.sd,
        residual_max_abs: residual.max_abs,
        exact_residual_max_abs: exact.max_abs,
        terminal_gap: gap,
        checks,
        passed,
    };
    dir.write_json("validation.json", &report)?;
    Ok(report)
}

/// Outcome of a command: where it wrote and whether acceptance passed.
pub struct CommandOutcome {
    pub dir: PathBuf,
    pub passed: bool,
    pub summary: serde_json::Value,
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn cmd_train(cfg: &RunConfig, seed: u64, warm: Option<&Path>) -> AppResult<CommandOutcome> {
    let clock = Clock::start();
    let mut dir = RunDir::create(&cfg.io.out, seed, label(cfg))?;
    let start = warm_start(&mut dir, cfg, seed, warm)?;
    let trained = train_into(&mut dir, cfg, seed, start, "")?;
    let summary = serde_json::json!({ "diagnostics": to_json(&trained.diagnostics) });
    write_manifest(&mut dir, &clock, "train", seed, cfg, summary.clone())?;
    Ok(CommandOutcome { dir: dir.path, passed: true, summary })
}

pub fn cmd_validate_merton(cfg: &RunConfig, seed: u64, warm: Option<&Path>) -> AppResult<CommandOutcome> {
    let merton = cfg.merton_params()?;
    let clock = Clock::start();
    let mut dir = RunDir::create(&cfg.io.out, seed, "merton")?;
    let start = warm_start(&mut dir, cfg, seed, warm)?;
    let trained = train_into(&mut dir, cfg, seed, start, "")?;
    let problem = cfg.problem()?;
    let ctx = problem.context(&cfg.training);
    let report = merton_report(&mut dir, cfg, &ctx.heads(&trained.nets), &merton, seed)?;
    let summary = serde_json::json!({ "diagnostics": to_json(&trained.diagnostics), "validation": to_json(&report) });
    write_manifest(&mut dir, &clock, "validate-merton", seed, cfg, summary.clone())?;
    Ok(CommandOutcome { dir: dir.path, passed: report.passed, summary })
}

pub fn cmd_evaluate(cfg: &RunConfig, seed: u64, checkpoint: &Path) -> AppResult<CommandOutcome> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_compatible(&cfg.training.network, cfg.market.n_assets(), checkpoint)?;
    let clock = Clock::start();
    let mut dir = RunDir::create(&cfg.io.out, seed, "eval")?;
    let s = evaluate_into(&mut dir, cfg, &ck.nets, seed)?;
    let passed = s.merton.as_ref().is_none_or(|m| m.passed);
    let summary = serde_json::json!({ "checkpoint": checkpoint.display().to_string(), "evaluation": to_json(&s) });
    write_manifest(&mut dir, &clock, "evaluate", seed, cfg, summary.clone())?;
    Ok(CommandOutcome { dir: dir.path, passed, summary })
}

fn label(cfg: &RunConfig) -> &'static str {
    match cfg.training.ablation {
        Ablation::Full => "",
        a => a.name(),
    }
}

/// Per-seed metrics collected by a seed study.
#[derive(Clone, Debug, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub dir: PathBuf,
    pub diagnostics: FinalDiagnostics,
    pub evaluation: EvaluationSummary,
}

impl SeedResult {
    /// Named scalar metrics aggregated across seeds.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let d = &self.diagnostics;
        let e = &self.evaluation;
        let mut m = vec![
            ("portfolio_binding_rate".to_string(), d.portfolio_binding_rate),
            ("consumption_binding_rate".to_string(), d.consumption_binding_rate),
            ("floor_hit_rate".to_string(), d.floor_hit_rate),
            ("raw_distance".to_string(), d.raw_distance),
            ("value_loss".to_string(), d.value_loss),
            ("adjoint_loss".to_string(), d.adjoint_loss),
            ("actor_objective".to_string(), d.actor_objective),
            ("crra_ce".to_string(), e.policy.welfare.crra_certainty_equivalent),
            ("myopic_crra_ce".to_string(), e.myopic.welfare.crra_certainty_equivalent),
            ("terminal_mean".to_string(), e.policy.terminal_wealth.mean),
            ("terminal_sd".to_string(), e.policy.terminal_wealth.sd),
            ("rank_agreement".to_string(), e.hedging.rank_agreement),
            ("signs_matching".to_string(), e.hedging.signs_matching as f64),
        ];
        if let (Some(v), Some(ce)) = (e.policy.welfare.ez_value, e.policy.welfare.ez_certainty_equivalent) {
            m.push(("ez_value".into(), v.value));
            m.push(("ez_ce".into(), ce));
        }
        if let (Some(v), Some(ce)) = (e.myopic.welfare.ez_value, e.myopic.welfare.ez_certainty_equivalent) {
            m.push(("myopic_ez_value".into(), v.value));
            m.push(("myopic_ez_ce".into(), ce));
        }
        for a in &e.hedging.by_asset {
            m.push((format!("mean_abs_hedge_{}", a.asset + 1), a.mean_abs_hedge));
        }
        for r in &e.hedging.regressions {
            m.push((format!("slope_{}", r.characteristic.name()), r.result.slope));
            m.push((format!("t_{}", r.characteristic.name()), r.result.t_stat));
        }
        m
    }
}

/// Trains and evaluates one seed inside `parent`.
pub fn run_seed(parent: &Path, cfg: &RunConfig, seed: u64, warm: Option<&Path>) -> AppResult<SeedResult> {
    let clock = Clock::start();
    let mut dir = RunDir::create(parent, seed, label(cfg))?;
    let start = warm_start(&mut dir, cfg, seed, warm)?;
    let trained = train_into(&mut dir, cfg, seed, start, "")?;
    let evaluation = evaluate_into(&mut dir, cfg, &trained.nets, seed)?;
    let summary = serde_json::json!({ "diagnostics": to_json(&trained.diagnostics), "evaluation": to_json(&evaluation) });
    write_manifest(&mut dir, &clock, "seed-run", seed, cfg, summary)?;
    Ok(SeedResult { seed, dir: dir.path, diagnostics: trained.diagnostics, evaluation })
}

/// `metric -> (mean, sd, n)` over seeds, in first-seen order.
pub fn aggregate(results: &[SeedResult]) -> Vec<(String, MeanSd, usize)> {
    let mut names: Vec<String> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in results {
        for (k, v) in r.metrics() {
            match names.iter().position(|n| *n == k) {
                Some(i) => values[i].push(v),
                None => {
                    names.push(k);
                    values.push(vec![v]);
                }
            }
        }
    }
    names.into_iter().zip(values).map(|(n, v)| (n, MeanSd::of(&v), v.len())).collect()
}

pub fn cmd_seed_study(cfg: &RunConfig, seeds: &[u64], warm: Option<&Path>) -> AppResult<CommandOutcome> {
    let clock = Clock::start();
    let first = seeds.first().copied().unwrap_or(0);
    let mut dir = RunDir::create(&cfg.io.out, first, "study")?;
    let mut results = Vec::new();
    for &s in seeds {
        eprintln!("seed {s}: training");
        results.push(run_seed(&dir.path, cfg, s, warm)?);
    }
    let mut rows = Vec::new();
    for r in &results {
        for (k, v) in r.metrics() {
            rows.push(row![r.seed, k, v]);
        }
    }
    dir.write_table(
        "seed_values",
        &Schema::new("seed_values", "Per-seed scalar metrics.", &[("seed", "seed"), ("metric", "name"), ("value", "value")]),
        &rows,
    )?;
    let agg = aggregate(&results);
    let rows: Vec<Vec<Cell>> = agg.iter().map(|(k, m, n)| row![k.as_str(), m.mean, m.sd, *n]).collect();
    dir.write_table(
        "seed_aggregate",
        &Schema::new(
            "seed_aggregate",
            "Mean and sample standard deviation of each metric across seeds.",
            &[("metric", "name"), ("mean", "mean across seeds"), ("sd", "sample standard deviation"), ("seeds", "seeds")],
        ),
        &rows,
    )?;
    let hedging_pass = results
        .iter()
        .filter(|r| r.evaluation.hedging.all_signs_match() && r.evaluation.hedging.rank_agreement >= 0.7)
        .count();
    let summary = serde_json::json!({
        "seeds": seeds,
        "runs": results.iter().map(|r| r.dir.display().to_string()).collect::<Vec<_>>(),
        "aggregate": agg.iter().map(|(k, m, n)| serde_json::json!({"metric": k, "mean": m.mean, "sd": m.sd, "seeds": n})).collect::<Vec<_>>(),
        "seeds_with_expected_hedging": hedging_pass,
    });
    dir.write_json("seed_study.json", &summary)?;
    write_manifest(&mut dir, &clock, "seed-study", first, cfg, summary.clone())?;
    Ok(CommandOutcome { dir: dir.path, passed: true, summary })
}

/// One variant of an ablation study.
#[derive(Clone, Debug, Serialize)]
pub struct AblationResult {
    pub variant: &'static str,
    pub dir: PathBuf,
    pub diagnostics: FinalDiagnostics,
    pub evaluation: EvaluationSummary,
}

pub fn cmd_ablate(cfg: &RunConfig, seed: u64, variants: &[Ablation], warm: Option<&Path>) -> AppResult<CommandOutcome> {
    let clock = Clock::start();
    let mut dir = RunDir::create(&cfg.io.out, seed, "ablation")?;
    let mut results = Vec::new();
    for &a in variants {
        eprintln!("ablation {}: training", a.name());
        let mut c = cfg.clone();
        c.training.ablation = a;
        let r = run_seed(&dir.path, &c, seed, warm)?;
        results.push(AblationResult { variant: a.name(), dir: r.dir, diagnostics: r.diagnostics, evaluation: r.evaluation });
    }
    let rows: Vec<Vec<Cell>> = results
        .iter()
        .map(|r| {
            let d = &r.diagnostics;
            let p = &r.evaluation.policy;
            row![
                r.variant,
                d.iterations,
                d.value_loss,
                d.adjoint_loss,
                d.actor_objective,
                d.portfolio_binding_rate,
                d.consumption_binding_rate,
                d.floor_hit_rate,
                d.raw_distance,
                d.executed_distance,
                d.floor_violations,
                p.terminal_wealth.mean,
                p.terminal_wealth.sd,
                p.terminal_wealth.q05,
                p.welfare.crra_certainty_equivalent,
                p.welfare.ez_certainty_equivalent.unwrap_or(f64::NAN),
                r.evaluation.hedging.rank_agreement
            ]
        })
        .collect();
    dir.write_table(
        "ablation",
        &Schema::new(
            "ablation",
            "Comparative report: final training diagnostics and evaluation of each variant.",
            &[
                ("variant", "ablation name"),
                ("iterations", "training iterations run"),
                ("value_loss", "final-window mean value loss"),
                ("adjoint_loss", "final-window mean adjoint loss"),
                ("actor_objective", "final-window mean actor objective"),
                ("portfolio_binding_rate", "final-window mean"),
                ("consumption_binding_rate", "final-window mean"),
                ("floor_hit_rate", "final-window mean"),
                ("raw_distance", "final-window mean raw-output distance from the portfolio set"),
                ("executed_distance", "distance of the weights actually held from the set"),
                ("floor_violations", "training states below the configured floor"),
                ("terminal_mean", "evaluation terminal-wealth mean"),
                ("terminal_sd", "evaluation terminal-wealth sd"),
                ("terminal_q05", "evaluation terminal-wealth 5% quantile"),
                ("crra_ce", "time-additive certainty equivalent"),
                ("ez_ce", "EZ certainty equivalent; NaN when disabled"),
                ("rank_agreement", "Spearman of per-asset hedging demand with the decreasing reference"),
            ],
        ),
        &rows,
    )?;
    let summary = serde_json::json!({
        "variants": results.iter().map(|r| serde_json::json!({
            "variant": r.variant,
            "dir": r.dir.display().to_string(),
            "diagnostics": to_json(&r.diagnostics),
        })).collect::<Vec<_>>(),
    });
    dir.write_json("ablation.json", &summary)?;
    write_manifest(&mut dir, &clock, "ablate", seed, cfg, summary.clone())?;
    Ok(CommandOutcome { dir: dir.path, passed: true, summary })
}
