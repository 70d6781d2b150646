//! Fixed-topology feedforward networks.

use alloc::format;
use alloc::vec::Vec;

use super::tape::{Activation, Gradients, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(output_dim: usize) -> Self {
        NetworkSpec { input_dim: 3, hidden_layers: 3, hidden_width: 128, activation: Activation::Softplus, output_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(invalid("network", "input and output dimensions must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(invalid("network.hidden_width", "must be positive"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        shapes.push((fan_in, self.output_dim));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Multilayer perceptron: affine layers with the spec's activation between
/// them and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: NetworkSpec,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
}

impl Mlp {
    /// Hidden layers drawn uniformly on `±1/sqrt(fan_in)`; the output layer
    /// starts at zero.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Stream::new(seed);
        let shapes = spec.layer_shapes();
        let last = shapes.len() - 1;
        let mut weights = Vec::with_capacity(shapes.len());
        let mut biases = Vec::with_capacity(shapes.len());
        for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            if l == last {
                weights.push(Matrix::zeros(fan_in, fan_out));
                biases.push(Matrix::zeros(1, fan_out));
            } else {
                let bound = 1.0 / math::sqrt(fan_in as f64);
                weights.push(Matrix::from_fn(fan_in, fan_out, |_, _| rng.uniform_in(-bound, bound)));
                biases.push(Matrix::from_fn(1, fan_out, |_, _| rng.uniform_in(-bound, bound)));
            }
        }
        Ok(Mlp { spec, weights, biases })
    }

    /// Network with every parameter (including the output layer) random;
    /// used by gradient tests.
    pub fn random(spec: NetworkSpec, seed: u64, scale: f64) -> Result<Self> {
        let mut net = Mlp::new(spec, seed)?;
        let mut rng = Stream::new(seed ^ 0xA5A5);
        let params: Vec<f64> = (0..spec.n_params()).map(|_| scale * rng.uniform_in(-1.0, 1.0)).collect();
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Incompatible(format!(
                "expected {} parameters, found {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = b.as_slice().len();
            b.as_mut_slice().copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(Matrix::is_finite)
    }

    fn affine(&self, l: usize, x: &Matrix) -> Matrix {
        let mut z = linalg::matmul(x, &self.weights[l]);
        let b = self.biases[l].row(0);
        for i in 0..z.rows() {
            for (v, bb) in z.row_mut(i).iter_mut().zip(b) {
                *v += bb;
            }
        }
        z
    }

    /// Batched forward pass without recording (`x` has one sample per row).
    pub fn forward(&self, x: &Matrix) -> Matrix {
        let act = self.spec.activation;
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for l in 0..last {
            let z = self.affine(l, &h);
            h = z.map(|v| act.eval(v, 0));
        }
        self.affine(last, &h)
    }

    /// Forward pass plus forward-mode tangents along the input directions
    /// `dirs` (each the same shape as `x`).
    pub fn forward_tangents(&self, x: &Matrix, dirs: &[Matrix]) -> (Matrix, Vec<Matrix>) {
        let act = self.spec.activation;
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        let mut tangents: Vec<Matrix> = dirs.to_vec();
        for l in 0..last {
            let z = self.affine(l, &h);
            let slope = z.map(|v| act.eval(v, 1));
            for t in tangents.iter_mut() {
                *t = linalg::matmul(t, &self.weights[l]).zip_map(&slope, |a, s| a * s);
            }
            h = z.map(|v| act.eval(v, 0));
        }
        let out = self.affine(last, &h);
        for t in tangents.iter_mut() {
            *t = linalg::matmul(t, &self.weights[last]);
        }
        (out, tangents)
    }

    /// Places the parameters on `tape` as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let weights = self.weights.iter().map(|w| tape.param(w.clone())).collect();
        let biases = self.biases.iter().map(|b| tape.param(b.clone())).collect();
        BoundMlp { spec: self.spec, weights, biases }
    }

    /// Places the parameters on `tape` as constants (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        let weights = self.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let biases = self.biases.iter().map(|b| tape.constant(b.clone())).collect();
        BoundMlp { spec: self.spec, weights, biases }
    }
}

/// Parameters of an [`Mlp`] living on a tape.
pub struct BoundMlp {
    spec: NetworkSpec,
    weights: Vec<Var>,
    biases: Vec<Var>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let act = self.spec.activation;
        let last = self.weights.len() - 1;
        let mut h = x;
        for l in 0..last {
            let z = tape.matmul(h, self.weights[l]);
            let z = tape.add_row(z, self.biases[l]);
            h = tape.act(z, act, 0);
        }
        let z = tape.matmul(h, self.weights[last]);
        tape.add_row(z, self.biases[last])
    }

    /// Recorded forward pass with tangents, so input derivatives can be
    /// differentiated with respect to the parameters.
    pub fn forward_tangents(&self, tape: &mut Tape, x: Var, dirs: &[Var]) -> (Var, Vec<Var>) {
        let act = self.spec.activation;
        let last = self.weights.len() - 1;
        let mut h = x;
        let mut tangents: Vec<Var> = dirs.to_vec();
        for l in 0..last {
            let z = tape.matmul(h, self.weights[l]);
            let z = tape.add_row(z, self.biases[l]);
            let slope = tape.act(z, act, 1);
            for t in tangents.iter_mut() {
                let lin = tape.matmul(*t, self.weights[l]);
                *t = tape.mul(lin, slope);
            }
            h = tape.act(z, act, 0);
        }
        let z = tape.matmul(h, self.weights[last]);
        let out = tape.add_row(z, self.biases[last]);
        for t in tangents.iter_mut() {
            *t = tape.matmul(*t, self.weights[last]);
        }
        (out, tangents)
    }

    /// Gradient flattened in [`Mlp::params`] order.
    pub fn gradient(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.n_params());
        for (&w, &b) in self.weights.iter().zip(&self.biases) {
            let (wr, wc) = tape.value(w).shape();
            out.extend_from_slice(grads.get_or_zeros(w, wr, wc).as_slice());
            let (br, bc) = tape.value(b).shape();
            out.extend_from_slice(grads.get_or_zeros(b, br, bc).as_slice());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn small_spec() -> NetworkSpec {
        NetworkSpec { input_dim: 3, hidden_layers: 2, hidden_width: 5, activation: Activation::Softplus, output_dim: 2 }
    }

    #[test]
    fn zero_output_layer_at_init() {
        let net = Mlp::new(small_spec(), 3).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| 0.1 * (i + j) as f64);
        assert!(net.forward(&x).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_layer_passes_input() {
        let spec = NetworkSpec { input_dim: 3, hidden_layers: 0, hidden_width: 0, activation: Activation::Linear, output_dim: 3 };
        let mut net = Mlp::new(spec, 0).unwrap();
        let mut p = vec![0.0; spec.n_params()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.3, -0.2, 0.9]);
        assert_eq!(net.forward(&x), x);
    }

    #[test]
    fn params_round_trip_and_reject_wrong_length() {
        let net = Mlp::random(small_spec(), 5, 0.5).unwrap();
        let mut other = Mlp::new(small_spec(), 9).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }

    #[test]
    fn tape_forward_matches_fast_path() {
        let net = Mlp::random(small_spec(), 7, 0.8).unwrap();
        let x = Matrix::from_fn(6, 3, |i, j| libm::cos(i as f64 + 2.0 * j as f64));
        let dir = Matrix::from_fn(6, 3, |_, j| if j == 1 { 1.0 } else { 0.0 });
        let (fast, fast_t) = net.forward_tangents(&x, &[dir.clone()]);
        assert_eq!(fast, net.forward(&x));
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let xv = tape.constant(x);
        let dv = tape.constant(dir);
        let (out, tan) = bound.forward_tangents(&mut tape, xv, &[dv]);
        assert_eq!(tape.value(out), &fast);
        assert_eq!(tape.value(tan[0]), &fast_t[0]);
    }
}
