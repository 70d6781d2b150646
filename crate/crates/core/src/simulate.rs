//! Batched Monte Carlo simulation of controlled wealth and factor paths.
//!
//! Every path draws its initial state and its increments from its own
//! stream, selected by `(seed, path)`, so a batch does not depend on how the
//! paths are split into chunks.

use alloc::vec;
use alloc::vec::Vec;

use crate::analytic::{myopic_consumption_fraction, MeanVarianceSolver};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::market::{Control, InitialStateSampler, Market, State};
use crate::math;
use crate::preferences::crra_utility;
use crate::projection::{
    project_consumption, project_portfolio, relative_projection_distance, ConsumptionBounds,
    DiagnosticsAccumulator, PortfolioConstraint,
};
use crate::rng::Stream;

/// Maps a batch of states to raw controls: one row per state with `d`
/// portfolio weights followed by a consumption rate in currency units.
pub trait Policy: Sync {
    fn n_assets(&self) -> usize;
    fn raw_controls(&self, t: &[f64], wealth: &[f64], factor: &[f64]) -> Result<Matrix>;
}

/// Runs independent tasks and returns their results in task order.
pub trait Executor {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs tasks one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..tasks).map(f).collect()
    }
}

/// Maps raw controls into the admissible set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlProjector {
    pub portfolio: PortfolioConstraint,
    pub consumption: ConsumptionBounds,
    /// When false the raw weights are used as they are (soft-penalty mode);
    /// the projection is still computed for diagnostics.
    pub project_portfolio: bool,
}

impl ControlProjector {
    pub fn new(portfolio: PortfolioConstraint, consumption_cap: f64) -> Self {
        ControlProjector { portfolio, consumption: ConsumptionBounds::new(consumption_cap), project_portfolio: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub steps: usize,
    pub paths: usize,
    /// Floor applied after each step.
    pub floor: f64,
    pub init: InitialStateSampler,
    pub seed: u64,
    /// Paths per task handed to the executor.
    pub chunk: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("simulation.steps", "must be >= 1"));
        }
        if self.paths == 0 {
            return Err(invalid("simulation.paths", "must be >= 1"));
        }
        if !(self.floor > 0.0) {
            return Err(invalid("simulation.floor", "must be > 0"));
        }
        if self.chunk == 0 {
            return Err(invalid("simulation.chunk", "must be >= 1"));
        }
        self.init.validate()
    }
}

/// Simulated trajectories. Per-state arrays are step-major: entry
/// `k * paths + m` is path `m` at time `t_k`. Per-control arrays have
/// `n_assets + 1` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub paths: usize,
    pub steps: usize,
    pub n_assets: usize,
    pub dt: f64,
    pub wealth: Vec<f64>,
    pub factor: Vec<f64>,
    pub raw: Vec<f64>,
    pub projected: Vec<f64>,
    pub increments: Vec<f64>,
    pub portfolio_active: Vec<bool>,
    pub consumption_active: Vec<bool>,
    pub floor_hit: Vec<bool>,
    /// Relative distance of the raw weights from the portfolio set.
    pub raw_distance: Vec<f64>,
}

impl PathBatch {
    fn empty(paths: usize, steps: usize, n_assets: usize, dt: f64) -> Self {
        let states = (steps + 1) * paths;
        let controls = steps * paths * (n_assets + 1);
        let flags = steps * paths;
        PathBatch {
            paths,
            steps,
            n_assets,
            dt,
            wealth: vec![0.0; states],
            factor: vec![0.0; states],
            raw: vec![0.0; controls],
            projected: vec![0.0; controls],
            increments: vec![0.0; controls],
            portfolio_active: vec![false; flags],
            consumption_active: vec![false; flags],
            floor_hit: vec![false; flags],
            raw_distance: vec![0.0; flags],
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn state(&self, k: usize, m: usize) -> State {
        let i = k * self.paths + m;
        State { t: self.time(k), wealth: self.wealth[i], factor: self.factor[i] }
    }

    fn control_range(&self, k: usize, m: usize) -> core::ops::Range<usize> {
        let w = self.n_assets + 1;
        let start = (k * self.paths + m) * w;
        start..start + w
    }

    /// Raw control at step `k < steps`: weights then consumption.
    pub fn raw_control(&self, k: usize, m: usize) -> &[f64] {
        &self.raw[self.control_range(k, m)]
    }

    pub fn projected_control(&self, k: usize, m: usize) -> &[f64] {
        &self.projected[self.control_range(k, m)]
    }

    pub fn increment(&self, k: usize, m: usize) -> &[f64] {
        &self.increments[self.control_range(k, m)]
    }

    pub fn terminal_wealth(&self) -> &[f64] {
        &self.wealth[self.steps * self.paths..]
    }

    /// Rates of the recorded activity flags.
    pub fn diagnostics(&self) -> Result<crate::projection::ProjectionDiagnostics> {
        let mut acc = DiagnosticsAccumulator::default();
        for i in 0..self.steps * self.paths {
            acc.record(self.portfolio_active[i], self.consumption_active[i], self.floor_hit[i], self.raw_distance[i]);
        }
        acc.finish()
    }

    /// Number of stored states strictly below `level`.
    pub fn count_below(&self, level: f64) -> usize {
        self.wealth.iter().filter(|&&w| w < level).count()
    }

    /// Builds a batch from chunks covering consecutive path ranges.
    fn stitch(chunks: Vec<PathBatch>, steps: usize, n_assets: usize, dt: f64) -> PathBatch {
        let paths: usize = chunks.iter().map(|c| c.paths).sum();
        let mut out = PathBatch::empty(paths, steps, n_assets, dt);
        let w = n_assets + 1;
        let mut offset = 0;
        for c in &chunks {
            for k in 0..=steps {
                let dst = k * paths + offset;
                let src = k * c.paths;
                out.wealth[dst..dst + c.paths].copy_from_slice(&c.wealth[src..src + c.paths]);
                out.factor[dst..dst + c.paths].copy_from_slice(&c.factor[src..src + c.paths]);
            }
            for k in 0..steps {
                let dst = k * paths + offset;
                let src = k * c.paths;
                for (to, from) in [
                    (&mut out.portfolio_active, &c.portfolio_active),
                    (&mut out.consumption_active, &c.consumption_active),
                    (&mut out.floor_hit, &c.floor_hit),
                ] {
                    to[dst..dst + c.paths].copy_from_slice(&from[src..src + c.paths]);
                }
                out.raw_distance[dst..dst + c.paths].copy_from_slice(&c.raw_distance[src..src + c.paths]);
                let (dst, src, len) = (dst * w, src * w, c.paths * w);
                out.raw[dst..dst + len].copy_from_slice(&c.raw[src..src + len]);
                out.projected[dst..dst + len].copy_from_slice(&c.projected[src..src + len]);
                out.increments[dst..dst + len].copy_from_slice(&c.increments[src..src + len]);
            }
            offset += c.paths;
        }
        out
    }
}

/// What happened at one path step.
struct StepRecord<'a> {
    k: usize,
    local: usize,
    before: State,
    after: State,
    raw: &'a [f64],
    applied: &'a [f64],
    db: &'a [f64],
    portfolio_active: bool,
    consumption_active: bool,
    floor_hit: bool,
    raw_distance: f64,
}

trait StepSink {
    fn start(&mut self, local: usize, s: State);
    fn record(&mut self, r: &StepRecord<'_>) -> Result<()>;
}

fn run_chunk<P: Policy + ?Sized, S: StepSink>(
    policy: &P,
    market: &Market,
    projector: &ControlProjector,
    cfg: &SimConfig,
    first_path: usize,
    count: usize,
    sink: &mut S,
) -> Result<()> {
    let p = market.params();
    let d = market.n_assets();
    let dt = p.horizon / cfg.steps as f64;
    let sqrt_dt = math::sqrt(dt);
    let mut streams: Vec<Stream> = (0..count).map(|j| Stream::for_path(cfg.seed, (first_path + j) as u64)).collect();
    let mut states: Vec<State> = streams.iter_mut().map(|s| cfg.init.sample(p, s)).collect();
    for (j, s) in states.iter().enumerate() {
        sink.start(j, *s);
    }
    let mut t = vec![0.0; count];
    let mut w = vec![0.0; count];
    let mut y = vec![0.0; count];
    let mut db = vec![0.0; d + 1];
    let mut applied = vec![0.0; d + 1];
    for k in 0..cfg.steps {
        for (j, s) in states.iter().enumerate() {
            t[j] = s.t;
            w[j] = s.wealth;
            y[j] = s.factor;
        }
        let raw = policy.raw_controls(&t, &w, &y)?;
        if raw.shape() != (count, d + 1) {
            return Err(Error::Shape { context: "policy output", expected: d + 1, found: raw.cols() });
        }
        if !raw.is_finite() {
            return Err(Error::NonFinite { context: "policy output" });
        }
        for j in 0..count {
            let row = raw.row(j);
            let s = states[j];
            let proj = project_portfolio(&row[..d], &projector.portfolio);
            let raw_distance = relative_projection_distance(&row[..d], &proj);
            let portfolio_active = row[..d].iter().zip(&proj).any(|(a, b)| (a - b).abs() > 1e-12);
            let weights: &[f64] = if projector.project_portfolio { &proj } else { &row[..d] };
            let (c, consumption_active) = project_consumption(row[d], s.wealth, &projector.consumption);
            applied[..d].copy_from_slice(weights);
            applied[d] = c;
            for x in db.iter_mut() {
                *x = sqrt_dt * streams[j].normal();
            }
            let control = Control { weights: weights.to_vec(), consumption: c };
            let (next, floor_hit) = market.step(s, &control, &db, dt, cfg.floor)?;
            let next = State { t: (k + 1) as f64 * dt, ..next };
            sink.record(&StepRecord {
                k,
                local: j,
                before: s,
                after: next,
                raw: row,
                applied: &applied,
                db: &db,
                portfolio_active,
                consumption_active,
                floor_hit,
                raw_distance,
            })?;
            states[j] = next;
        }
    }
    Ok(())
}

struct BatchSink(PathBatch);

impl StepSink for BatchSink {
    fn start(&mut self, local: usize, s: State) {
        self.0.wealth[local] = s.wealth;
        self.0.factor[local] = s.factor;
    }

    fn record(&mut self, r: &StepRecord<'_>) -> Result<()> {
        let b = &mut self.0;
        let next = (r.k + 1) * b.paths + r.local;
        b.wealth[next] = r.after.wealth;
        b.factor[next] = r.after.factor;
        let flag = r.k * b.paths + r.local;
        b.portfolio_active[flag] = r.portfolio_active;
        b.consumption_active[flag] = r.consumption_active;
        b.floor_hit[flag] = r.floor_hit;
        b.raw_distance[flag] = r.raw_distance;
        let range = b.control_range(r.k, r.local);
        b.raw[range.clone()].copy_from_slice(r.raw);
        b.projected[range.clone()].copy_from_slice(r.applied);
        b.increments[range].copy_from_slice(r.db);
        Ok(())
    }
}

fn chunks(cfg: &SimConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < cfg.paths {
        let n = cfg.chunk.min(cfg.paths - start);
        out.push((start, n));
        start += n;
    }
    out
}

/// Simulates `cfg.paths` full trajectories under `policy`.
pub fn simulate_batch<P: Policy + ?Sized, E: Executor>(
    policy: &P,
    market: &Market,
    projector: &ControlProjector,
    cfg: &SimConfig,
    executor: &E,
) -> Result<PathBatch> {
    cfg.validate()?;
    if policy.n_assets() != market.n_assets() {
        return Err(Error::Shape { context: "policy assets", expected: market.n_assets(), found: policy.n_assets() });
    }
    let d = market.n_assets();
    let dt = market.params().horizon / cfg.steps as f64;
    let parts = chunks(cfg);
    let results = executor.map(parts.len(), |i| {
        let (start, n) = parts[i];
        let mut sink = BatchSink(PathBatch::empty(n, cfg.steps, d, dt));
        run_chunk(policy, market, projector, cfg, start, n, &mut sink).map(|_| sink.0)
    });
    let mut done = Vec::with_capacity(results.len());
    for r in results {
        done.push(r?);
    }
    Ok(PathBatch::stitch(done, cfg.steps, d, dt))
}

/// Per-path outcome of a streamed simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathOutcome {
    pub initial_wealth: f64,
    pub terminal_wealth: f64,
    /// Left-point sum of `e^{-delta t} u(c) dt`.
    pub discounted_utility: f64,
}

/// Summary of a streamed simulation; used when storing whole trajectories
/// would be too large.
#[derive(Clone, Debug)]
pub struct OutcomeSummary {
    pub outcomes: Vec<PathOutcome>,
    /// Cross-path mean wealth at every time point.
    pub mean_wealth: Vec<f64>,
    /// Cross-path mean consumption-to-wealth ratio at every step.
    pub mean_consumption_ratio: Vec<f64>,
    pub diagnostics: DiagnosticsAccumulator,
    /// Stored states below the reference floor.
    pub below_floor: usize,
}

struct OutcomeSink {
    discount: f64,
    risk_aversion: f64,
    dt: f64,
    reference_floor: f64,
    outcomes: Vec<PathOutcome>,
    wealth_sum: Vec<f64>,
    ratio_sum: Vec<f64>,
    diagnostics: DiagnosticsAccumulator,
    below_floor: usize,
}

impl StepSink for OutcomeSink {
    fn start(&mut self, local: usize, s: State) {
        self.outcomes[local] =
            PathOutcome { initial_wealth: s.wealth, terminal_wealth: s.wealth, discounted_utility: 0.0 };
        self.wealth_sum[0] += s.wealth;
        self.below_floor += (s.wealth < self.reference_floor) as usize;
    }

    fn record(&mut self, r: &StepRecord<'_>) -> Result<()> {
        let c = r.applied[r.applied.len() - 1];
        let u = crra_utility(c, self.risk_aversion)?;
        let o = &mut self.outcomes[r.local];
        o.discounted_utility += math::exp(-self.discount * r.before.t) * u * self.dt;
        o.terminal_wealth = r.after.wealth;
        self.wealth_sum[r.k + 1] += r.after.wealth;
        self.ratio_sum[r.k] += c / r.before.wealth;
        self.below_floor += (r.after.wealth < self.reference_floor) as usize;
        self.diagnostics.record(r.portfolio_active, r.consumption_active, r.floor_hit, r.raw_distance);
        Ok(())
    }
}

/// Streams `cfg.paths` trajectories and keeps per-path time-additive
/// utility, terminal wealth and cross-path means. `reference_floor` only
/// counts violations; the applied floor is `cfg.floor`.
pub fn simulate_outcomes<P: Policy + ?Sized, E: Executor>(
    policy: &P,
    market: &Market,
    projector: &ControlProjector,
    cfg: &SimConfig,
    discount: f64,
    risk_aversion: f64,
    reference_floor: f64,
    executor: &E,
) -> Result<OutcomeSummary> {
    cfg.validate()?;
    let dt = market.params().horizon / cfg.steps as f64;
    let parts = chunks(cfg);
    let results = executor.map(parts.len(), |i| {
        let (start, n) = parts[i];
        let mut sink = OutcomeSink {
            discount,
            risk_aversion,
            dt,
            reference_floor,
            outcomes: vec![PathOutcome { initial_wealth: 0.0, terminal_wealth: 0.0, discounted_utility: 0.0 }; n],
            wealth_sum: vec![0.0; cfg.steps + 1],
            ratio_sum: vec![0.0; cfg.steps],
            diagnostics: DiagnosticsAccumulator::default(),
            below_floor: 0,
        };
        run_chunk(policy, market, projector, cfg, start, n, &mut sink).map(|_| sink)
    });
    let mut summary = OutcomeSummary {
        outcomes: Vec::with_capacity(cfg.paths),
        mean_wealth: vec![0.0; cfg.steps + 1],
        mean_consumption_ratio: vec![0.0; cfg.steps],
        diagnostics: DiagnosticsAccumulator::default(),
        below_floor: 0,
    };
    for r in results {
        let s = r?;
        summary.outcomes.extend_from_slice(&s.outcomes);
        for (a, b) in summary.mean_wealth.iter_mut().zip(&s.wealth_sum) {
            *a += b;
        }
        for (a, b) in summary.mean_consumption_ratio.iter_mut().zip(&s.ratio_sum) {
            *a += b;
        }
        summary.diagnostics.merge(&s.diagnostics);
        summary.below_floor += s.below_floor;
    }
    let n = cfg.paths as f64;
    summary.mean_wealth.iter_mut().for_each(|x| *x /= n);
    summary.mean_consumption_ratio.iter_mut().for_each(|x| *x /= n);
    Ok(summary)
}

/// Raw controls that ignore the state: fixed weights and a fixed
/// consumption-to-wealth ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPolicy {
    pub weights: Vec<f64>,
    pub consumption_ratio: f64,
}

impl Policy for ConstantPolicy {
    fn n_assets(&self) -> usize {
        self.weights.len()
    }

    fn raw_controls(&self, _t: &[f64], wealth: &[f64], _factor: &[f64]) -> Result<Matrix> {
        let d = self.weights.len();
        Ok(Matrix::from_fn(wealth.len(), d + 1, |i, j| {
            if j < d {
                self.weights[j]
            } else {
                self.consumption_ratio * wealth[i]
            }
        }))
    }
}

/// Single-asset Merton policy: constant weight and the closed-form
/// consumption ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MertonPolicy(pub crate::analytic::MertonParams);

impl Policy for MertonPolicy {
    fn n_assets(&self) -> usize {
        1
    }

    fn raw_controls(&self, t: &[f64], wealth: &[f64], _factor: &[f64]) -> Result<Matrix> {
        let phi = crate::analytic::merton_weight(&self.0);
        Ok(Matrix::from_fn(wealth.len(), 2, |i, j| {
            if j == 0 {
                phi
            } else {
                crate::analytic::merton_consumption_fraction(t[i], &self.0) * wealth[i]
            }
        }))
    }
}

/// Myopic benchmark: constrained mean-variance weights at the current factor
/// and the effective-Sharpe Merton consumption ratio.
#[derive(Clone, Debug)]
pub struct MyopicPolicy {
    pub market: Market,
    pub risk_aversion: f64,
    pub discount: f64,
    pub bequest_weight: f64,
    solver: MeanVarianceSolver,
}

impl MyopicPolicy {
    pub fn new(
        market: Market,
        risk_aversion: f64,
        discount: f64,
        bequest_weight: f64,
        constraint: &PortfolioConstraint,
    ) -> Result<Self> {
        let solver = MeanVarianceSolver::new(&market, risk_aversion, constraint)?;
        Ok(MyopicPolicy { market, risk_aversion, discount, bequest_weight, solver })
    }
}

impl Policy for MyopicPolicy {
    fn n_assets(&self) -> usize {
        self.market.n_assets()
    }

    fn raw_controls(&self, t: &[f64], wealth: &[f64], factor: &[f64]) -> Result<Matrix> {
        let d = self.market.n_assets();
        let mut out = Matrix::zeros(wealth.len(), d + 1);
        for i in 0..wealth.len() {
            let w = self.solver.solve(&self.market.excess_drift(factor[i]));
            let row = out.row_mut(i);
            row[..d].copy_from_slice(&w);
            row[d] = myopic_consumption_fraction(
                t[i],
                factor[i],
                &self.market,
                self.risk_aversion,
                self.discount,
                self.bequest_weight,
            ) * wealth[i];
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;

    fn cfg(paths: usize, steps: usize, seed: u64) -> SimConfig {
        SimConfig { steps, paths, floor: 0.1, init: InitialStateSampler::default(), seed, chunk: 7 }
    }

    fn projector() -> ControlProjector {
        ControlProjector::new(PortfolioConstraint::capped(2.0), 0.25)
    }

    #[test]
    fn risk_free_policy_compounds_deterministically() {
        let m = Market::new(MarketParams::baseline()).unwrap();
        let pol = ConstantPolicy { weights: vec![0.0; 5], consumption_ratio: -1.0 };
        let b = simulate_batch(&pol, &m, &projector(), &cfg(9, 20, 4), &Sequential).unwrap();
        let dt = 1.5 / 20.0;
        for mth in 0..9 {
            let w0 = b.wealth[mth];
            let mut w = w0;
            for k in 1..=20 {
                // consumption is clipped up to 1e-6 W
                w = (w * (1.0 + 0.02 * dt) - 1e-6 * w * dt).max(0.1);
                assert!((b.wealth[k * 9 + mth] - w).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batches_do_not_depend_on_chunking() {
        let m = Market::new(MarketParams::baseline()).unwrap();
        let pol = ConstantPolicy { weights: vec![0.3, 0.1, 0.4, 0.1, 0.1], consumption_ratio: 0.1 };
        let a = simulate_batch(&pol, &m, &projector(), &cfg(23, 12, 8), &Sequential).unwrap();
        let b = simulate_batch(&pol, &m, &projector(), &SimConfig { chunk: 100, ..cfg(23, 12, 8) }, &Sequential).unwrap();
        assert_eq!(a, b);
        let c = simulate_batch(&pol, &m, &projector(), &cfg(23, 12, 9), &Sequential).unwrap();
        assert_ne!(a.wealth, c.wealth);
    }

    #[test]
    fn flags_match_stored_controls() {
        let m = Market::new(MarketParams::baseline()).unwrap();
        let pol = ConstantPolicy { weights: vec![1.0, 1.0, 0.5, 0.0, 0.0], consumption_ratio: 0.4 };
        let b = simulate_batch(&pol, &m, &projector(), &cfg(5, 4, 1), &Sequential).unwrap();
        for k in 0..4 {
            for j in 0..5 {
                let raw = b.raw_control(k, j);
                let proj = b.projected_control(k, j);
                assert_eq!(b.portfolio_active[k * 5 + j], raw[..5].iter().zip(&proj[..5]).any(|(a, b)| (a - b).abs() > 1e-12));
                assert!(b.consumption_active[k * 5 + j]);
                assert!((proj[..5].iter().sum::<f64>() - 2.0).abs() < 1e-12);
            }
        }
        let d = b.diagnostics().unwrap();
        assert_eq!(d.portfolio_binding_rate, 1.0);
        assert_eq!(d.consumption_binding_rate, 1.0);
    }

    #[test]
    fn outcomes_agree_with_full_batch() {
        let m = Market::new(MarketParams::baseline()).unwrap();
        let pol = ConstantPolicy { weights: vec![0.2; 5], consumption_ratio: 0.05 };
        let c = cfg(11, 10, 3);
        let b = simulate_batch(&pol, &m, &projector(), &c, &Sequential).unwrap();
        let o = simulate_outcomes(&pol, &m, &projector(), &c, 0.03, 1.5, 0.1, &Sequential).unwrap();
        for j in 0..11 {
            assert_eq!(o.outcomes[j].terminal_wealth, b.terminal_wealth()[j]);
        }
        assert_eq!(o.diagnostics.finish().unwrap(), b.diagnostics().unwrap());
        assert_eq!(o.below_floor, 0);
    }
}
