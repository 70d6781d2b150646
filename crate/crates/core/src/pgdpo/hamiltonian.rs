//! The recursive-utility Hamiltonian and its control gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::market::{Control, Market, State};
use crate::preferences::{ez_aggregator, ez_aggregator_dc, EzParams};

/// Costate pair `(p_W, p_Y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Costate {
    pub wealth: f64,
    pub factor: f64,
}

/// Second derivatives of the value function that multiply controls in the
/// diffusion part of the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Curvature {
    /// `V_WW`.
    pub wealth_wealth: f64,
    /// `V_WY`.
    pub wealth_factor: f64,
}

fn check(u: &Control, market: &Market) -> Result<()> {
    if u.weights.len() != market.n_assets() {
        return Err(Error::Shape { context: "hamiltonian weights", expected: market.n_assets(), found: u.weights.len() });
    }
    Ok(())
}

/// `H = f(c, v) + p_W (rW + W pi'(mu(Y) - r) - c) + p_Y kappa (ybar - Y)`.
pub fn hamiltonian(s: &State, v: f64, p: &Costate, u: &Control, market: &Market, ez: &EzParams) -> Result<f64> {
    check(u, market)?;
    let m = market.params();
    let excess = market.excess_drift(s.factor);
    let risky: f64 = u.weights.iter().zip(&excess).map(|(a, b)| a * b).sum();
    let drift_w = m.risk_free_rate * s.wealth + s.wealth * risky - u.consumption;
    let drift_y = m.factor_reversion * (m.factor_mean - s.factor);
    Ok(ez_aggregator(u.consumption, v, ez)? + p.wealth * drift_w + p.factor * drift_y)
}

/// `(dH/dpi, dH/dc)` of [`hamiltonian`].
pub fn hamiltonian_grad_u(
    s: &State,
    v: f64,
    p: &Costate,
    u: &Control,
    market: &Market,
    ez: &EzParams,
) -> Result<(Vec<f64>, f64)> {
    check(u, market)?;
    let grad_pi = market.excess_drift(s.factor).into_iter().map(|e| p.wealth * s.wealth * e).collect();
    let grad_c = ez_aggregator_dc(u.consumption, v, ez)? - p.wealth;
    Ok((grad_pi, grad_c))
}

/// Control-dependent diffusion terms
/// `1/2 W^2 V_WW pi' Sigma Sigma' pi + W xi V_WY pi' Sigma e_0`.
pub fn diffusion_terms(s: &State, k: &Curvature, weights: &[f64], market: &Market) -> f64 {
    let cov = market.covariance();
    let loadings = market.factor_loadings();
    let d = weights.len();
    let mut quad = 0.0;
    for i in 0..d {
        let row = cov.row(i);
        quad += weights[i] * row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
    }
    let cross: f64 = weights.iter().zip(&loadings).map(|(a, b)| a * b).sum();
    let xi = market.params().factor_vol;
    0.5 * s.wealth * s.wealth * k.wealth_wealth * quad + s.wealth * xi * k.wealth_factor * cross
}

/// Gradient of [`diffusion_terms`] in the weights.
pub fn diffusion_terms_grad(s: &State, k: &Curvature, weights: &[f64], market: &Market) -> Vec<f64> {
    let cov = market.covariance();
    let loadings = market.factor_loadings();
    let xi = market.params().factor_vol;
    (0..weights.len())
        .map(|i| {
            let cp: f64 = cov.row(i).iter().zip(weights).map(|(a, b)| a * b).sum();
            s.wealth * s.wealth * k.wealth_wealth * cp + s.wealth * xi * k.wealth_factor * loadings[i]
        })
        .collect()
}

/// Hamiltonian plus the diffusion terms; the objective the actor ascends.
pub fn augmented_hamiltonian(
    s: &State,
    v: f64,
    p: &Costate,
    k: &Curvature,
    u: &Control,
    market: &Market,
    ez: &EzParams,
) -> Result<f64> {
    Ok(hamiltonian(s, v, p, u, market, ez)? + diffusion_terms(s, k, &u.weights, market))
}

pub fn augmented_hamiltonian_grad_u(
    s: &State,
    v: f64,
    p: &Costate,
    k: &Curvature,
    u: &Control,
    market: &Market,
    ez: &EzParams,
) -> Result<(Vec<f64>, f64)> {
    let (mut g, gc) = hamiltonian_grad_u(s, v, p, u, market, ez)?;
    for (a, b) in g.iter_mut().zip(diffusion_terms_grad(s, k, &u.weights, market)) {
        *a += b;
    }
    Ok((g, gc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketParams;
    use alloc::vec;

    fn market() -> Market {
        Market::new(MarketParams::baseline()).unwrap()
    }

    #[test]
    fn examples() {
        let m = market();
        let ez = EzParams::default();
        let s = State { t: 0.0, wealth: 1.0, factor: 0.4 };
        let u = Control { weights: vec![0.0; 5], consumption: 1.0 };
        let p = Costate { wealth: 1.0, factor: 0.0 };
        assert!((hamiltonian(&s, -2.0, &p, &u, &m, &ez).unwrap() + 0.98).abs() < 1e-15);
        let zero = Costate { wealth: 0.0, factor: 0.0 };
        let u2 = Control { weights: vec![0.2; 5], consumption: 2.0 };
        assert_eq!(hamiltonian(&s, -2.0, &zero, &u2, &m, &ez).unwrap(), ez_aggregator(2.0, -2.0, &ez).unwrap());
        let s5 = State { factor: 0.5, ..s };
        let py = Costate { wealth: 0.0, factor: 1.0 };
        assert!((hamiltonian(&s5, -2.0, &py, &u, &m, &ez).unwrap() + 0.04).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let m = market();
        let ez = EzParams::default();
        let s = State { t: 0.0, wealth: 1.0, factor: 0.4 };
        let u = Control { weights: vec![0.2; 5], consumption: 2.0 };
        let (g, _) = hamiltonian_grad_u(&s, -2.0, &Costate { wealth: 0.0, factor: 0.3 }, &u, &m, &ez).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let (g, gc) = hamiltonian_grad_u(&s, -2.0, &Costate { wealth: 1.0, factor: 0.0 }, &u, &m, &ez).unwrap();
        for (a, b) in g.iter().zip([0.04, 0.06, 0.08, 0.10, 0.12]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((gc + 0.9925).abs() < 1e-15);
    }

    #[test]
    fn diffusion_gradient_matches_finite_differences() {
        let m = market();
        let s = State { t: 0.3, wealth: 1.3, factor: 0.45 };
        let k = Curvature { wealth_wealth: 2.5, wealth_factor: -0.7 };
        let w = [0.1, 0.3, 0.2, 0.25, 0.15];
        let g = diffusion_terms_grad(&s, &k, &w, &m);
        for i in 0..5 {
            let mut a = w;
            let mut b = w;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (diffusion_terms(&s, &k, &a, &m) - diffusion_terms(&s, &k, &b, &m)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8 * g[i].abs().max(1.0));
        }
    }
}
