//! Independent reference computations shared by the core integration tests
//! and the acceptance suite. Nothing here calls the routine it checks.

#![allow(dead_code)]

use ezpgdpo_core::analytic::MertonParams;
use ezpgdpo_core::linalg::Matrix;
use ezpgdpo_core::projection::{PortfolioConstraint, PortfolioMode};

/// Central finite difference of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

// ---------------------------------------------------------------------------
// HJB grid solver for the single-asset time-additive problem
// ---------------------------------------------------------------------------

/// Crank-Nicolson solution of the Merton HJB on a log-wealth grid.
pub struct HjbSolution {
    pub horizon: f64,
    /// Log-wealth nodes.
    pub x: Vec<f64>,
    /// `values[n][i]` is `V(t_n, exp(x_i))` with `t_n = T - n dT`.
    pub values: Vec<Vec<f64>>,
    /// Consumption-to-wealth ratio recovered from the first derivative.
    pub consumption: Vec<Vec<f64>>,
    pub steps: usize,
}

impl HjbSolution {
    fn level(&self, t: f64) -> usize {
        let n = ((self.horizon - t) / self.horizon * self.steps as f64).round() as usize;
        assert!(
            (self.horizon - n as f64 * self.horizon / self.steps as f64 - t).abs() < 1e-9,
            "t = {t} is not on the time grid"
        );
        n
    }

    fn interp(&self, row: &[f64], wealth: f64) -> f64 {
        let x = wealth.ln();
        let h = self.x[1] - self.x[0];
        let j = (((x - self.x[0]) / h).floor() as usize).min(self.x.len() - 2);
        let s = (x - self.x[j]) / h;
        row[j] * (1.0 - s) + row[j + 1] * s
    }

    pub fn value(&self, t: f64, wealth: f64) -> f64 {
        self.interp(&self.values[self.level(t)], wealth)
    }

    pub fn consumption_fraction(&self, t: f64, wealth: f64) -> f64 {
        self.interp(&self.consumption[self.level(t)], wealth)
    }
}

/// Controls and generator coefficients at one node.
struct Local {
    a: f64,
    b: f64,
    source: f64,
    consumption: f64,
}

fn crra(c: f64, r: f64) -> f64 {
    if (r - 1.0).abs() < 1e-14 {
        c.ln()
    } else {
        c.powf(1.0 - r) / (1.0 - r)
    }
}

/// Feedback controls from first and second log-wealth derivatives.
fn local(p: &MertonParams, t: f64, x: f64, vx: f64, vxx: f64) -> Local {
    let excess = p.mu - p.rate;
    let curvature = vxx - vx;
    let pi = if excess == 0.0 { 0.0 } else { -excess * vx / (p.sigma * p.sigma * curvature) };
    let w = x.exp();
    let c = ((p.discount * t).exp() * vx / w).powf(-1.0 / p.risk_aversion);
    let k = c / w;
    let a = 0.5 * pi * pi * p.sigma * p.sigma;
    Local { a, b: p.rate + pi * excess - k - a, source: (-p.discount * t).exp() * crra(c, p.risk_aversion), consumption: k }
}

/// Derivatives at every node; the end nodes use the homothetic Robin
/// condition `V_x = (1-R) V` through a ghost node.
fn derivatives(v: &[f64], h: f64, g: f64) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut vx = vec![0.0; n];
    let mut vxx = vec![0.0; n];
    for i in 0..n {
        let left = if i == 0 { v[1] - 2.0 * h * g * v[0] } else { v[i - 1] };
        let right = if i == n - 1 { v[n - 2] + 2.0 * h * g * v[n - 1] } else { v[i + 1] };
        vx[i] = (right - left) / (2.0 * h);
        vxx[i] = (right - 2.0 * v[i] + left) / (h * h);
    }
    (vx, vxx)
}

/// Discretization of the first-derivative term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drift {
    Upwind,
    Central,
}

/// Tridiagonal operator `L`, ghost nodes folded in.
fn operator(locals: &[Local], h: f64, g: f64, drift: Drift) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = locals.len();
    let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, l) in locals.iter().enumerate() {
        let mut cl = l.a / (h * h);
        let mut cu = l.a / (h * h);
        let mut cd = -2.0 * l.a / (h * h);
        if drift == Drift::Central {
            cu += l.b / (2.0 * h);
            cl -= l.b / (2.0 * h);
        } else if l.b > 0.0 {
            cu += l.b / h;
            cd -= l.b / h;
        } else {
            cl -= l.b / h;
            cd += l.b / h;
        }
        if i == 0 {
            cu += cl;
            cd -= 2.0 * h * g * cl;
            cl = 0.0;
        }
        if i == n - 1 {
            cl += cu;
            cd += 2.0 * h * g * cu;
            cu = 0.0;
        }
        lo[i] = cl;
        di[i] = cd;
        up[i] = cu;
    }
    (lo, di, up)
}

fn apply(lo: &[f64], di: &[f64], up: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let mut s = di[i] * v[i];
            if i > 0 {
                s += lo[i] * v[i - 1];
            }
            if i + 1 < n {
                s += up[i] * v[i + 1];
            }
            s
        })
        .collect()
}

/// Thomas algorithm for `lo[i] x[i-1] + di[i] x[i] + up[i] x[i+1] = rhs[i]`.
pub fn solve_tridiagonal(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..n {
        let m = di[i] - lo[i] * c[i - 1];
        c[i] = up[i] / m;
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Solves `V_t + max_{pi,c} [...] = 0` backwards from the bequest utility
/// on `nodes` log-wealth points over `[ln w_lo, ln w_hi]` and `steps` time
/// steps. Controls are frozen at the half step by a predictor-corrector.
pub fn solve_merton_hjb(
    p: &MertonParams,
    nodes: usize,
    steps: usize,
    w_lo: f64,
    w_hi: f64,
    drift: Drift,
) -> HjbSolution {
    let (x0, x1) = (w_lo.ln(), w_hi.ln());
    let h = (x1 - x0) / (nodes - 1) as f64;
    let x: Vec<f64> = (0..nodes).map(|i| x0 + i as f64 * h).collect();
    let g = 1.0 - p.risk_aversion;
    let dtau = p.horizon / steps as f64;
    let terminal_scale = (-p.discount * p.horizon).exp() * p.bequest_weight;
    let mut v: Vec<f64> = x.iter().map(|&xi| terminal_scale * crra(xi.exp(), p.risk_aversion)).collect();
    let controls_at = |v: &[f64], t: f64| -> Vec<Local> {
        let (vx, vxx) = derivatives(v, h, g);
        (0..nodes).map(|i| local(p, t, x[i], vx[i], vxx[i])).collect()
    };
    let mut values = vec![v.clone()];
    let mut consumption = vec![controls_at(&v, p.horizon).iter().map(|l| l.consumption).collect()];
    for n in 0..steps {
        let t_mid = p.horizon - (n as f64 + 0.5) * dtau;
        let mut guess = v.clone();
        for _ in 0..3 {
            let mid: Vec<f64> = v.iter().zip(&guess).map(|(a, b)| 0.5 * (a + b)).collect();
            let locals = controls_at(&mid, t_mid);
            let (lo, di, up) = operator(&locals, h, g, drift);
            let lv = apply(&lo, &di, &up, &v);
            let rhs: Vec<f64> = (0..nodes).map(|i| v[i] + 0.5 * dtau * lv[i] + dtau * locals[i].source).collect();
            let lo_i: Vec<f64> = lo.iter().map(|c| -0.5 * dtau * c).collect();
            let di_i: Vec<f64> = di.iter().map(|c| 1.0 - 0.5 * dtau * c).collect();
            let up_i: Vec<f64> = up.iter().map(|c| -0.5 * dtau * c).collect();
            guess = solve_tridiagonal(&lo_i, &di_i, &up_i, &rhs);
        }
        v = guess;
        let t = p.horizon - (n + 1) as f64 * dtau;
        consumption.push(controls_at(&v, t).iter().map(|l| l.consumption).collect());
        values.push(v.clone());
    }
    HjbSolution { horizon: p.horizon, x, values, consumption, steps }
}

/// Deterministic consumption problem with log utility and no bequest,
/// discretized in `steps` periods and solved by bisection on the budget
/// multiplier. Returns the first-period consumption-to-wealth ratio.
pub fn deterministic_log_consumption_ratio(rate: f64, discount: f64, horizon: f64, steps: usize) -> f64 {
    let dt = horizon / steps as f64;
    let growth = 1.0 + rate * dt;
    // c_k = e^{-delta t_k} growth^{k+1} / lambda  maximizes the Lagrangian
    // term by term; lambda is fixed by exhausting unit wealth.
    let spend = |lambda: f64| -> f64 {
        (0..steps)
            .map(|k| {
                let c = (-discount * k as f64 * dt).exp() * growth.powi(k as i32 + 1) / lambda;
                c * dt / growth.powi(k as i32 + 1)
            })
            .sum()
    };
    let (mut lo, mut hi) = (1e-6_f64, 1e6_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if spend(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = (lo * hi).sqrt();
    growth / lambda
}

// ---------------------------------------------------------------------------
// Portfolio-set oracles
// ---------------------------------------------------------------------------

fn feasible(pi: &[f64], cons: &PortfolioConstraint, tol: f64) -> bool {
    let s: f64 = pi.iter().sum();
    pi.iter().all(|&x| x >= -tol)
        && match cons.mode {
            PortfolioMode::EqualitySimplex => (s - cons.budget).abs() <= tol,
            PortfolioMode::CappedSimplex => s <= cons.leverage_cap + tol,
        }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact projection by enumerating every support and both states of the
/// budget constraint; keeps the nearest feasible candidate.
pub fn projection_by_enumeration(raw: &[f64], cons: &PortfolioConstraint) -> Vec<f64> {
    let d = raw.len();
    let level = match cons.mode {
        PortfolioMode::EqualitySimplex => cons.budget,
        PortfolioMode::CappedSimplex => cons.leverage_cap,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut offer = |cand: Vec<f64>| {
        if feasible(&cand, cons, 1e-12) {
            let dd = dist_sq(&cand, raw);
            if best.as_ref().map_or(true, |(b, _)| dd < *b) {
                best = Some((dd, cand));
            }
        }
    };
    if cons.mode == PortfolioMode::CappedSimplex {
        offer(vec![0.0; d]);
    }
    for mask in 1u32..(1 << d) {
        let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        // budget face: shift the support so it sums to the level
        let sum: f64 = support.iter().map(|&i| raw[i]).sum();
        let shift = (sum - level) / support.len() as f64;
        let mut cand = vec![0.0; d];
        for &i in &support {
            cand[i] = raw[i] - shift;
        }
        offer(cand);
        if cons.mode == PortfolioMode::CappedSimplex {
            let mut free = vec![0.0; d];
            for &i in &support {
                free[i] = raw[i];
            }
            offer(free);
        }
    }
    best.expect("the portfolio set is nonempty").1
}

/// Feasible points on a regular lattice with roughly `target` members.
pub fn feasible_grid(d: usize, cons: &PortfolioConstraint, target: usize) -> Vec<Vec<f64>> {
    let level = match cons.mode {
        PortfolioMode::EqualitySimplex => cons.budget,
        PortfolioMode::CappedSimplex => cons.leverage_cap,
    };
    let free = match cons.mode {
        PortfolioMode::EqualitySimplex => d - 1,
        PortfolioMode::CappedSimplex => d,
    };
    // simplex lattice of resolution m has about m^free / free! points
    let fact: f64 = (1..=free).map(|k| k as f64).product();
    let m = ((target as f64 * fact).powf(1.0 / free as f64)).ceil() as usize;
    let mut out = Vec::new();
    let mut idx = vec![0usize; free];
    loop {
        let used: usize = idx.iter().sum();
        if used <= m {
            let mut pi: Vec<f64> = idx.iter().map(|&k| level * k as f64 / m as f64).collect();
            if cons.mode == PortfolioMode::EqualitySimplex {
                pi.push(level * (m - used) as f64 / m as f64);
            }
            out.push(pi);
        }
        let mut j = 0;
        loop {
            if j == free {
                return out;
            }
            idx[j] += 1;
            if idx[j] <= m {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Largest violation of the projection optimality conditions: a common
/// threshold on the support, raw values below it off the support, and
/// (capped mode) a nonnegative threshold that vanishes off the cap.
pub fn kkt_violation(raw: &[f64], out: &[f64], cons: &PortfolioConstraint) -> f64 {
    let support: Vec<usize> = (0..raw.len()).filter(|&i| out[i] > 0.0).collect();
    let sum: f64 = out.iter().sum();
    let mut worst: f64 = out.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
    let lambda = if support.is_empty() {
        0.0
    } else {
        support.iter().map(|&i| raw[i] - out[i]).sum::<f64>() / support.len() as f64
    };
    for &i in &support {
        worst = worst.max((raw[i] - out[i] - lambda).abs());
    }
    for i in 0..raw.len() {
        if out[i] == 0.0 {
            worst = worst.max(raw[i] - lambda);
        }
    }
    match cons.mode {
        PortfolioMode::EqualitySimplex => worst = worst.max((sum - cons.budget).abs()),
        PortfolioMode::CappedSimplex => {
            worst = worst.max(-lambda).max((sum - cons.leverage_cap).max(0.0));
            worst = worst.max((lambda * (cons.leverage_cap - sum)).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Mean-variance oracle
// ---------------------------------------------------------------------------

/// `pi' e - R/2 pi' C pi`.
pub fn mean_variance(excess: &[f64], cov: &Matrix, risk_aversion: f64, pi: &[f64]) -> f64 {
    let d = pi.len();
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += pi[i] * cov.get(i, j) * pi[j];
        }
    }
    excess.iter().zip(pi).map(|(a, b)| a * b).sum::<f64>() - 0.5 * risk_aversion * quad
}

/// Projected gradient ascent on the mean-variance objective, projecting with
/// the enumeration oracle above.
pub fn mean_variance_ascent(excess: &[f64], cov: &Matrix, risk_aversion: f64, cons: &PortfolioConstraint) -> Vec<f64> {
    let d = excess.len();
    let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    let step = 1.0 / (risk_aversion * trace);
    let mut pi = vec![cons.budget / d as f64; d];
    for _ in 0..100_000 {
        let grad: Vec<f64> = (0..d)
            .map(|i| excess[i] - risk_aversion * (0..d).map(|j| cov.get(i, j) * pi[j]).sum::<f64>())
            .collect();
        let raw: Vec<f64> = pi.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
        let next = projection_by_enumeration(&raw, cons);
        let moved = dist_sq(&next, &pi).sqrt();
        pi = next;
        if moved < 1e-15 {
            break;
        }
    }
    pi
}
