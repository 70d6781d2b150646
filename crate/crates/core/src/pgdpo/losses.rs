//! Value, adjoint and actor losses evaluated on a simulated batch.

use alloc::vec;
use alloc::vec::Vec;

use super::config::{ActorCurvature, LossWeights};
use super::hamiltonian::{augmented_hamiltonian, augmented_hamiltonian_grad_u, Costate, Curvature};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::market::{Control, Market, State};
use crate::nn::heads::{costate_on_tape, value_on_tape};
use crate::nn::{BoundMlp, FeatureMap, HeadConfig, Heads, NetworkTriple, Tape, Var};
use crate::preferences::{bequest_utility, ez_aggregator, ez_aggregator_dv, EzParams};
use crate::projection::{
    consumption_pullback, portfolio_pullback, project_consumption, project_portfolio, ConsumptionBounds,
    PortfolioConstraint, ProjectionGradient,
};
use crate::simulate::PathBatch;

/// Everything the losses need besides the networks and the batch.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub market: &'a Market,
    pub preferences: &'a EzParams,
    pub features: FeatureMap,
    pub heads: HeadConfig,
}

impl<'a> LossContext<'a> {
    pub fn heads<'n>(&self, nets: &'n NetworkTriple) -> Heads<'n> {
        Heads { nets, features: self.features, cfg: self.heads }
    }
}

/// A `(step, path)` index into a batch.
pub type Point = (usize, usize);

/// Every `(k, m)` with `k < steps`, or `k <= steps` when `include_terminal`.
pub fn all_points(batch: &PathBatch, include_terminal: bool) -> Vec<Point> {
    let last = if include_terminal { batch.steps + 1 } else { batch.steps };
    (0..last).flat_map(|k| (0..batch.paths).map(move |m| (k, m))).collect()
}

/// `(t, W, Y)` columns of the batch states at `points`, shifted `shift`
/// steps forward.
pub fn gather(batch: &PathBatch, points: &[Point], shift: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut t = Vec::with_capacity(points.len());
    let mut w = Vec::with_capacity(points.len());
    let mut y = Vec::with_capacity(points.len());
    for &(k, m) in points {
        let s = batch.state(k + shift, m);
        t.push(s.t);
        w.push(s.wealth);
        y.push(s.factor);
    }
    (t, w, y)
}

/// Value loss recorded on `tape`; returns the loss node and the number of
/// points excluded because `(c, v)` left the aggregator domain.
pub fn value_loss_on_tape(
    tape: &mut Tape,
    value: &BoundMlp,
    ctx: &LossContext<'_>,
    batch: &PathBatch,
    points: &[Point],
) -> Result<(Var, usize)> {
    let d = batch.n_assets;
    let n = points.len();
    let (t0, w0, y0) = gather(batch, points, 0);
    let (t1, w1, y1) = gather(batch, points, 1);
    let v0 = value_on_tape(tape, value, &ctx.features, &ctx.heads, &t0, &w0, &y0, false).value;
    let v1_net = value_on_tape(tape, value, &ctx.features, &ctx.heads, &t1, &w1, &y1, false).value;
    let mut keep = Matrix::zeros(n, 1);
    let mut terminal = Matrix::zeros(n, 1);
    for (i, &(k, _)) in points.iter().enumerate() {
        if k + 1 == batch.steps {
            terminal.set(i, 0, bequest_utility(w1[i], ctx.preferences)?);
        } else {
            keep.set(i, 0, 1.0);
        }
    }
    let keep = tape.constant(keep);
    let terminal = tape.constant(terminal);
    let continuation = tape.mul(v1_net, keep);
    let v1 = tape.add(continuation, terminal);

    let mut fval = Matrix::zeros(n, 1);
    let mut fder = Matrix::zeros(n, 1);
    let mut valid = Matrix::zeros(n, 1);
    let mut violations = 0;
    for (i, &(k, m)) in points.iter().enumerate() {
        let c = batch.projected_control(k, m)[d];
        let v = tape.value(v0).get(i, 0);
        match (ez_aggregator(c, v, ctx.preferences), ez_aggregator_dv(c, v, ctx.preferences)) {
            (Ok(f), Ok(df)) => {
                fval.set(i, 0, f);
                fder.set(i, 0, df);
                valid.set(i, 0, 1.0);
            }
            _ => violations += 1,
        }
    }
    if violations == n {
        return Err(Error::AggregatorDomain { c: f64::NAN, v: f64::NAN });
    }
    let f = tape.mapped(v0, fval, fder);
    let drift = tape.scale(f, batch.dt);
    let diff = tape.sub(v0, v1);
    let residual = tape.sub(diff, drift);
    let valid = tape.constant(valid);
    let residual = tape.mul(residual, valid);
    let sq = tape.square(residual);
    let total = tape.sum(sq);
    Ok((tape.scale(total, 1.0 / (n - violations) as f64), violations))
}

/// Adjoint loss `mean |lambda - grad V|^2` recorded on `tape`.
pub fn adjoint_loss_on_tape(
    tape: &mut Tape,
    value: &BoundMlp,
    costate: &BoundMlp,
    ctx: &LossContext<'_>,
    batch: &PathBatch,
    points: &[Point],
) -> Var {
    let (t, w, y) = gather(batch, points, 0);
    let tv = value_on_tape(tape, value, &ctx.features, &ctx.heads, &t, &w, &y, true);
    let (lw, ly) = costate_on_tape(tape, costate, &ctx.features, &ctx.heads, &t, &w, &y);
    let dw = tape.sub(lw, tv.d_wealth.expect("gradient requested"));
    let dy = tape.sub(ly, tv.d_factor.expect("gradient requested"));
    let sw = tape.square(dw);
    let sy = tape.square(dy);
    let both = tape.add(sw, sy);
    tape.mean(both)
}

/// Value loss over all steps of the batch.
pub fn value_loss(batch: &PathBatch, nets: &NetworkTriple, ctx: &LossContext<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let value = nets.value.bind_frozen(&mut tape);
    let (loss, _) = value_loss_on_tape(&mut tape, &value, ctx, batch, &all_points(batch, false))?;
    Ok(tape.scalar(loss))
}

/// Adjoint loss over every stored state, terminal states included.
pub fn adjoint_loss(batch: &PathBatch, nets: &NetworkTriple, ctx: &LossContext<'_>) -> f64 {
    let mut tape = Tape::new();
    let value = nets.value.bind_frozen(&mut tape);
    let costate = nets.costate.bind_frozen(&mut tape);
    let loss = adjoint_loss_on_tape(&mut tape, &value, &costate, ctx, batch, &all_points(batch, true));
    tape.scalar(loss)
}

/// Where the actor reads costates and curvature from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostateSource {
    /// The costate network and its input Jacobian.
    Network,
    /// The value network's input gradient, curvature by finite differences.
    ValueGradient,
}

/// Actor settings derived from the training configuration.
#[derive(Clone, Copy, Debug)]
pub struct ActorSettings {
    pub curvature: ActorCurvature,
    pub source: CostateSource,
    pub constraint: PortfolioConstraint,
    pub consumption: ConsumptionBounds,
    pub project_portfolio: bool,
    pub rule: ProjectionGradient,
    pub weights: LossWeights,
}

/// Frozen critic quantities at a set of states.
pub struct CriticView {
    pub value: Vec<f64>,
    pub costate: Vec<Costate>,
    pub curvature: Vec<Curvature>,
}

/// Relative step for the finite-difference curvature of the value network.
const FD_STEP: f64 = 1e-3;

pub fn critic_view(
    nets: &NetworkTriple,
    ctx: &LossContext<'_>,
    settings: &ActorSettings,
    t: &[f64],
    w: &[f64],
    y: &[f64],
) -> CriticView {
    let heads = ctx.heads(nets);
    let n = w.len();
    let value = heads.value(t, w, y);
    let mut costate = Vec::with_capacity(n);
    let mut curvature = vec![Curvature::default(); n];
    match settings.source {
        CostateSource::Network => {
            let cb = heads.costate(t, w, y);
            for i in 0..n {
                costate.push(Costate { wealth: cb.wealth[i], factor: cb.factor[i] });
                if settings.curvature == ActorCurvature::Costate {
                    curvature[i] = Curvature { wealth_wealth: cb.wealth_d_wealth[i], wealth_factor: cb.wealth_d_factor[i] };
                }
            }
        }
        CostateSource::ValueGradient => {
            let g = heads.value_with_gradient(t, w, y);
            for i in 0..n {
                costate.push(Costate { wealth: g.d_wealth[i], factor: g.d_factor[i] });
            }
            if settings.curvature == ActorCurvature::Costate {
                let hw: Vec<f64> = w.iter().map(|x| FD_STEP * x).collect();
                let hy = FD_STEP * ctx.features.factor_scale;
                let wp: Vec<f64> = w.iter().zip(&hw).map(|(a, h)| a + h).collect();
                let wm: Vec<f64> = w.iter().zip(&hw).map(|(a, h)| a - h).collect();
                let yp: Vec<f64> = y.iter().map(|a| a + hy).collect();
                let ym: Vec<f64> = y.iter().map(|a| a - hy).collect();
                let (gwp, gwm) = (heads.value_with_gradient(t, &wp, y), heads.value_with_gradient(t, &wm, y));
                let (gyp, gym) = (heads.value_with_gradient(t, w, &yp), heads.value_with_gradient(t, w, &ym));
                for i in 0..n {
                    curvature[i] = Curvature {
                        wealth_wealth: (gwp.d_wealth[i] - gwm.d_wealth[i]) / (2.0 * hw[i]),
                        wealth_factor: (gyp.d_wealth[i] - gym.d_wealth[i]) / (2.0 * hy),
                    };
                }
            }
        }
    }
    CriticView { value, costate, curvature }
}

/// Actor objective and its gradient with respect to the policy parameters
/// (ascent direction is `+gradient`).
pub struct ActorEvaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
}

/// Actor objective at the given states. The critic is frozen; gradients
/// reach the policy parameters through the projection's pullback.
pub fn actor_objective_at(
    nets: &NetworkTriple,
    ctx: &LossContext<'_>,
    settings: &ActorSettings,
    t: &[f64],
    w: &[f64],
    y: &[f64],
    with_gradient: bool,
) -> Result<ActorEvaluation> {
    let n = w.len();
    let d = nets.n_assets();
    let critic = critic_view(nets, ctx, settings, t, w, y);
    let mut tape = Tape::new();
    let policy = nets.policy.bind(&mut tape);
    let x = tape.constant(ctx.features.batch(t, w, y));
    let out = policy.forward(&mut tape, x);
    let o = tape.value(out).clone();
    let mut seed = Matrix::zeros(n, d + 1);
    let mut total = 0.0;
    let scale = 1.0 / n as f64;
    let lw = settings.weights;
    for i in 0..n {
        let raw: Vec<f64> = (0..d).map(|j| o.get(i, j) + ctx.heads.portfolio_centre).collect();
        let raw_c = (o.get(i, d) + ctx.heads.consumption_centre) * w[i];
        let proj = project_portfolio(&raw, &settings.constraint);
        let weights = if settings.project_portfolio { proj.clone() } else { raw.clone() };
        let (c, _) = project_consumption(raw_c, w[i], &settings.consumption);
        let s = State { t: t[i], wealth: w[i], factor: y[i] };
        let u = Control { weights, consumption: c };
        let (v, p, k) = (critic.value[i], &critic.costate[i], &critic.curvature[i]);
        let h = augmented_hamiltonian(&s, v, p, k, &u, ctx.market, ctx.preferences)?;
        let norm_sq: f64 = u.weights.iter().map(|x| x * x).sum();
        let gap_sq: f64 = raw.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut j = h - lw.regularization * norm_sq;
        if !settings.project_portfolio {
            j -= lw.penalty * gap_sq;
        }
        if !j.is_finite() {
            return Err(Error::NonFinite { context: "actor objective" });
        }
        total += j;
        if !with_gradient {
            continue;
        }
        let (gpi, gc) = augmented_hamiltonian_grad_u(&s, v, p, k, &u, ctx.market, ctx.preferences)?;
        // loss = -J / n
        let loss_grad: Vec<f64> =
            gpi.iter().zip(&u.weights).map(|(g, x)| -scale * (g - 2.0 * lw.regularization * x)).collect();
        let raw_grad = if settings.project_portfolio {
            portfolio_pullback(&raw, &proj, &loss_grad, &settings.constraint, settings.rule)
        } else {
            loss_grad.iter().zip(raw.iter().zip(&proj)).map(|(g, (a, b))| g + scale * 2.0 * lw.penalty * (a - b)).collect()
        };
        let row = seed.row_mut(i);
        row[..d].copy_from_slice(&raw_grad);
        row[d] = consumption_pullback(raw_c, w[i], -scale * gc, &settings.consumption, settings.rule) * w[i];
    }
    let objective = total * scale;
    if !with_gradient {
        return Ok(ActorEvaluation { objective, gradient: Vec::new() });
    }
    let grads = tape.backward(out, seed);
    // backward ran on the loss; flip to the ascent direction
    let gradient = policy.gradient(&tape, &grads).into_iter().map(|g| -g).collect();
    Ok(ActorEvaluation { objective, gradient })
}

/// Actor objective over every non-terminal state of the batch.
pub fn actor_objective(
    batch: &PathBatch,
    nets: &NetworkTriple,
    ctx: &LossContext<'_>,
    settings: &ActorSettings,
) -> Result<f64> {
    let (t, w, y) = gather(batch, &all_points(batch, false), 0);
    Ok(actor_objective_at(nets, ctx, settings, &t, &w, &y, false)?.objective)
}
