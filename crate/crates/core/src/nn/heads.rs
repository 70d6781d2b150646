//! State features and the output heads turning raw network outputs into a
//! value, a costate and a raw control.

use alloc::vec::Vec;

use super::adam::AdamState;
use super::mlp::{Mlp, NetworkSpec};
use super::tape::{Tape, Var};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::market::MarketParams;
use crate::math;
use crate::rng::{derive_seed, tag};

/// How wealth enters the networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum WealthEncoding {
    /// `ln W`.
    #[default]
    Log,
    /// `(W - W_min) / (1 - W_min)`.
    Affine,
}

/// Fixed affine/log normalization of `(t, W, Y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureMap {
    pub horizon: f64,
    pub wealth_floor: f64,
    pub factor_mean: f64,
    /// Three stationary standard deviations of the factor.
    pub factor_scale: f64,
    pub wealth_encoding: WealthEncoding,
}

impl FeatureMap {
    pub fn new(p: &MarketParams, wealth_encoding: WealthEncoding) -> Self {
        FeatureMap {
            horizon: p.horizon,
            wealth_floor: p.wealth_floor,
            factor_mean: p.factor_mean,
            factor_scale: 3.0 * p.factor_stationary_sd(),
            wealth_encoding,
        }
    }

    pub fn features(&self, t: f64, w: f64, y: f64) -> [f64; 3] {
        let wf = match self.wealth_encoding {
            WealthEncoding::Log => math::ln(w),
            WealthEncoding::Affine => (w - self.wealth_floor) / (1.0 - self.wealth_floor),
        };
        [t / self.horizon, wf, (y - self.factor_mean) / self.factor_scale]
    }

    /// Derivative of the wealth feature with respect to `W`.
    pub fn wealth_slope(&self, w: f64) -> f64 {
        match self.wealth_encoding {
            WealthEncoding::Log => 1.0 / w,
            WealthEncoding::Affine => 1.0 / (1.0 - self.wealth_floor),
        }
    }

    pub fn factor_slope(&self) -> f64 {
        1.0 / self.factor_scale
    }

    pub fn batch(&self, t: &[f64], w: &[f64], y: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(w.len(), 3);
        for i in 0..w.len() {
            m.row_mut(i).copy_from_slice(&self.features(t[i], w[i], y[i]));
        }
        m
    }

    /// Tangent directions of the features along `W` and `Y`.
    pub fn directions(&self, w: &[f64]) -> (Matrix, Matrix) {
        let n = w.len();
        let dw = Matrix::from_fn(n, 3, |i, j| if j == 1 { self.wealth_slope(w[i]) } else { 0.0 });
        let dy = Matrix::from_fn(n, 3, |_, j| if j == 2 { self.factor_slope() } else { 0.0 });
        (dw, dy)
    }
}

/// Output transform of the value network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ValueHead {
    /// `V = sign(1-R) exp(h)`.
    Exponential,
    /// `V = W^(1-R)/(1-R) * exp(h)`: the unit-weight terminal utility times
    /// a positive correction.
    #[default]
    UtilityScaled,
}

/// Output transform of the costate network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CostateHead {
    Identity,
    /// `lambda_W = W^-R (1 + o_W)`, `lambda_Y = W^(1-R)/|1-R| o_Y`.
    #[default]
    WealthScaled,
}

/// Everything the heads need besides the networks themselves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub risk_aversion: f64,
    pub value_head: ValueHead,
    pub costate_head: CostateHead,
    /// Added to every raw portfolio output.
    pub portfolio_centre: f64,
    /// Added to the raw consumption-ratio output.
    pub consumption_centre: f64,
}

impl HeadConfig {
    fn sign(&self) -> f64 {
        if self.risk_aversion > 1.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Log of `|V| / exp(h)`, the part of the value that does not come from
    /// the network.
    fn value_log_offset(&self, w: f64) -> f64 {
        match self.value_head {
            ValueHead::Exponential => 0.0,
            ValueHead::UtilityScaled => {
                let e = 1.0 - self.risk_aversion;
                e * math::ln(w) - math::ln(e.abs())
            }
        }
    }

    fn value_log_offset_slope(&self, w: f64) -> f64 {
        match self.value_head {
            ValueHead::Exponential => 0.0,
            ValueHead::UtilityScaled => (1.0 - self.risk_aversion) / w,
        }
    }
}

/// Value, costate and policy networks with their optimizer states.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTriple {
    pub value: Mlp,
    pub costate: Mlp,
    pub policy: Mlp,
    pub value_adam: AdamState,
    pub costate_adam: AdamState,
    pub policy_adam: AdamState,
}

impl NetworkTriple {
    /// Fresh networks for `n_assets` risky assets; `hidden` supplies depth,
    /// width and activation.
    pub fn new(hidden: NetworkSpec, n_assets: usize, seed: u64) -> Result<Self> {
        if n_assets == 0 {
            return Err(invalid("market.assets", "at least one risky asset is required"));
        }
        let spec = |out| NetworkSpec { input_dim: 3, output_dim: out, ..hidden };
        let value = Mlp::new(spec(1), derive_seed(seed, tag::INIT_VALUE))?;
        let costate = Mlp::new(spec(2), derive_seed(seed, tag::INIT_COSTATE))?;
        let policy = Mlp::new(spec(n_assets + 1), derive_seed(seed, tag::INIT_POLICY))?;
        Ok(NetworkTriple {
            value_adam: AdamState::new(value.n_params()),
            costate_adam: AdamState::new(costate.n_params()),
            policy_adam: AdamState::new(policy.n_params()),
            value,
            costate,
            policy,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.policy.spec().output_dim - 1
    }

    pub fn params_finite(&self) -> bool {
        self.value.params_finite() && self.costate.params_finite() && self.policy.params_finite()
    }
}

/// Batch of value evaluations with first derivatives.
#[derive(Clone, Debug, Default)]
pub struct ValueBatch {
    pub value: Vec<f64>,
    pub d_wealth: Vec<f64>,
    pub d_factor: Vec<f64>,
}

/// Batch of costate evaluations with the wealth-component Jacobian.
#[derive(Clone, Debug, Default)]
pub struct CostateBatch {
    pub wealth: Vec<f64>,
    pub factor: Vec<f64>,
    /// `d lambda_W / dW`.
    pub wealth_d_wealth: Vec<f64>,
    /// `d lambda_W / dY`.
    pub wealth_d_factor: Vec<f64>,
}

/// Evaluates the three heads on batches of states.
#[derive(Clone, Copy, Debug)]
pub struct Heads<'a> {
    pub nets: &'a NetworkTriple,
    pub features: FeatureMap,
    pub cfg: HeadConfig,
}

impl<'a> Heads<'a> {
    pub fn value(&self, t: &[f64], w: &[f64], y: &[f64]) -> Vec<f64> {
        let h = self.nets.value.forward(&self.features.batch(t, w, y));
        let s = self.cfg.sign();
        (0..w.len()).map(|i| s * math::exp(h.get(i, 0) + self.cfg.value_log_offset(w[i]))).collect()
    }

    pub fn value_with_gradient(&self, t: &[f64], w: &[f64], y: &[f64]) -> ValueBatch {
        let x = self.features.batch(t, w, y);
        let (dw, dy) = self.features.directions(w);
        let (h, tan) = self.nets.value.forward_tangents(&x, &[dw, dy]);
        let s = self.cfg.sign();
        let mut out = ValueBatch::default();
        for i in 0..w.len() {
            let v = s * math::exp(h.get(i, 0) + self.cfg.value_log_offset(w[i]));
            out.value.push(v);
            out.d_wealth.push(v * (tan[0].get(i, 0) + self.cfg.value_log_offset_slope(w[i])));
            out.d_factor.push(v * tan[1].get(i, 0));
        }
        out
    }

    pub fn costate(&self, t: &[f64], w: &[f64], y: &[f64]) -> CostateBatch {
        let x = self.features.batch(t, w, y);
        let (dw, dy) = self.features.directions(w);
        let (o, tan) = self.nets.costate.forward_tangents(&x, &[dw, dy]);
        let r = self.cfg.risk_aversion;
        let mut out = CostateBatch::default();
        for i in 0..w.len() {
            let (o0, o1) = (o.get(i, 0), o.get(i, 1));
            let (o0_w, o0_y) = (tan[0].get(i, 0), tan[1].get(i, 0));
            match self.cfg.costate_head {
                CostateHead::Identity => {
                    out.wealth.push(o0);
                    out.factor.push(o1);
                    out.wealth_d_wealth.push(o0_w);
                    out.wealth_d_factor.push(o0_y);
                }
                CostateHead::WealthScaled => {
                    let m = math::powf(w[i], -r);
                    let scale = math::powf(w[i], 1.0 - r) / (1.0 - r).abs();
                    out.wealth.push(m * (1.0 + o0));
                    out.factor.push(scale * o1);
                    out.wealth_d_wealth.push(-r * m / w[i] * (1.0 + o0) + m * o0_w);
                    out.wealth_d_factor.push(m * o0_y);
                }
            }
        }
        out
    }

    /// Raw controls, one row per state: `d` portfolio weights followed by a
    /// consumption rate in currency units.
    pub fn raw_controls(&self, t: &[f64], w: &[f64], y: &[f64]) -> Matrix {
        let mut out = self.nets.policy.forward(&self.features.batch(t, w, y));
        let d = out.cols() - 1;
        for i in 0..w.len() {
            let row = out.row_mut(i);
            for x in row[..d].iter_mut() {
                *x += self.cfg.portfolio_centre;
            }
            row[d] = (row[d] + self.cfg.consumption_centre) * w[i];
        }
        out
    }
}

/// Recorded value head: returns `(V, V_W, V_Y)` columns, the derivatives
/// only when `with_gradient` is set.
pub struct TapeValue {
    pub value: Var,
    pub d_wealth: Option<Var>,
    pub d_factor: Option<Var>,
}

/// Builds the value head on a tape for the states `(t, w, y)`.
pub fn value_on_tape(
    tape: &mut Tape,
    net: &super::mlp::BoundMlp,
    features: &FeatureMap,
    cfg: &HeadConfig,
    t: &[f64],
    w: &[f64],
    y: &[f64],
    with_gradient: bool,
) -> TapeValue {
    let x = tape.constant(features.batch(t, w, y));
    let offset = tape.constant(Matrix::from_fn(w.len(), 1, |i, _| cfg.value_log_offset(w[i])));
    let s = cfg.sign();
    if !with_gradient {
        let h = net.forward(tape, x);
        let q = tape.add(h, offset);
        let e = tape.exp(q);
        let value = tape.scale(e, s);
        return TapeValue { value, d_wealth: None, d_factor: None };
    }
    let (dw, dy) = features.directions(w);
    let dw = tape.constant(dw);
    let dy = tape.constant(dy);
    let (h, tan) = net.forward_tangents(tape, x, &[dw, dy]);
    let q = tape.add(h, offset);
    let e = tape.exp(q);
    let value = tape.scale(e, s);
    let slope = tape.constant(Matrix::from_fn(w.len(), 1, |i, _| cfg.value_log_offset_slope(w[i])));
    let hw = tape.add(tan[0], slope);
    let d_wealth = tape.mul(value, hw);
    let d_factor = tape.mul(value, tan[1]);
    TapeValue { value, d_wealth: Some(d_wealth), d_factor: Some(d_factor) }
}

/// Builds the costate head on a tape; returns `(lambda_W, lambda_Y)` columns.
pub fn costate_on_tape(
    tape: &mut Tape,
    net: &super::mlp::BoundMlp,
    features: &FeatureMap,
    cfg: &HeadConfig,
    t: &[f64],
    w: &[f64],
    y: &[f64],
) -> (Var, Var) {
    let x = tape.constant(features.batch(t, w, y));
    let o = net.forward(tape, x);
    let o0 = tape.column(o, 0);
    let o1 = tape.column(o, 1);
    match cfg.costate_head {
        CostateHead::Identity => (o0, o1),
        CostateHead::WealthScaled => {
            let r = cfg.risk_aversion;
            let m = tape.constant(Matrix::from_fn(w.len(), 1, |i, _| math::powf(w[i], -r)));
            let scale =
                tape.constant(Matrix::from_fn(w.len(), 1, |i, _| math::powf(w[i], 1.0 - r) / (1.0 - r).abs()));
            let shifted = tape.offset(o0, 1.0);
            (tape.mul(m, shifted), tape.mul(scale, o1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Activation;
    use alloc::vec;

    fn setup() -> (NetworkTriple, FeatureMap, HeadConfig) {
        let spec = NetworkSpec { input_dim: 3, hidden_layers: 2, hidden_width: 6, activation: Activation::Softplus, output_dim: 1 };
        let nets = NetworkTriple::new(spec, 2, 17).unwrap();
        let p = MarketParams::baseline();
        let cfg = HeadConfig {
            risk_aversion: 1.5,
            value_head: ValueHead::UtilityScaled,
            costate_head: CostateHead::WealthScaled,
            portfolio_centre: 0.5,
            consumption_centre: 0.125,
        };
        (nets, FeatureMap::new(&p, WealthEncoding::Log), cfg)
    }

    #[test]
    fn fresh_heads_start_at_unit_bequest_and_centre() {
        let (nets, fm, cfg) = setup();
        let heads = Heads { nets: &nets, features: fm, cfg };
        let v = heads.value(&[0.0, 0.7], &[1.0, 4.0], &[0.4, 0.5]);
        assert!((v[0] + 2.0).abs() < 1e-14);
        assert!((v[1] + 1.0).abs() < 1e-14);
        let c = heads.costate(&[0.0], &[4.0], &[0.4]);
        assert!((c.wealth[0] - 0.125).abs() < 1e-15);
        assert_eq!(c.factor[0], 0.0);
        let raw = heads.raw_controls(&[0.0], &[2.0], &[0.4]);
        assert_eq!(raw.row(0), &[0.5, 0.5, 0.25]);
        let plain = HeadConfig { value_head: ValueHead::Exponential, ..cfg };
        let heads = Heads { nets: &nets, features: fm, cfg: plain };
        assert_eq!(heads.value(&[0.3], &[1.7], &[0.1]), vec![-1.0]);
    }

    #[test]
    fn fresh_costate_matches_fresh_value_gradient() {
        let (nets, fm, cfg) = setup();
        let heads = Heads { nets: &nets, features: fm, cfg };
        let (t, w, y) = ([0.2, 1.0], [0.3, 1.9], [0.35, 0.6]);
        let vb = heads.value_with_gradient(&t, &w, &y);
        let cb = heads.costate(&t, &w, &y);
        for i in 0..2 {
            assert!((vb.d_wealth[i] - cb.wealth[i]).abs() < 1e-12 * cb.wealth[i].abs());
            assert!(vb.d_factor[i].abs() < 1e-15);
        }
    }
}
