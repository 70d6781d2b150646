//! Reverse-mode differentiation over batched matrices.
//!
//! The operation set is closed: every node is one of the [`Op`] variants and
//! each variant knows its own vector-Jacobian product. Input gradients of a
//! network are built as forward tangents *on the tape*, so losses that
//! depend on them (the adjoint loss) can be differentiated again.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{self, Matrix};
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Activation {
    #[default]
    Softplus,
    Relu,
    /// Identity, used by tests and linear probes.
    Linear,
}

impl Activation {
    /// `order`-th derivative of the activation at `x` (`order` 0 is the
    /// activation itself).
    pub fn eval(self, x: f64, order: u8) -> f64 {
        match self {
            Activation::Softplus => match order {
                0 => math::softplus(x),
                1 => math::sigmoid(x),
                2 => {
                    let s = math::sigmoid(x);
                    s * (1.0 - s)
                }
                3 => {
                    let s = math::sigmoid(x);
                    s * (1.0 - s) * (1.0 - 2.0 * s)
                }
                _ => {
                    let s = math::sigmoid(x);
                    s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)
                }
            },
            Activation::Relu => match order {
                0 => x.max(0.0),
                1 => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            },
            Activation::Linear => match order {
                0 => x,
                1 => 1.0,
                _ => 0.0,
            },
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + row` with a `1 x m` row broadcast down the rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * col` with an `n x 1` column broadcast across the columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Act(Var, Activation, u8),
    Exp(Var),
    Ln(Var),
    Square(Var),
    PowConst(Var, f64),
    Column(Var, usize),
    HCat(Vec<Var>),
    /// Row sums, `n x m -> n x 1`.
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    /// Elementwise map whose value was computed outside the tape; stores the
    /// local derivative. Not differentiable a second time.
    Mapped(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Computation record for one batch.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.grads[v.0].clone().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that gradients do not flow into.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = linalg::matmul(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, rm) = (self.value(a), self.value(row));
        assert_eq!(rm.rows(), 1, "add_row expects a single row");
        assert_eq!(am.cols(), rm.cols(), "add_row width");
        let mut value = am.clone();
        let r = rm.row(0).to_vec();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (am, cm) = (self.value(a), self.value(col));
        assert_eq!(cm.cols(), 1, "mul_col expects a column");
        assert_eq!(am.rows(), cm.rows(), "mul_col height");
        let mut value = am.clone();
        for i in 0..value.rows() {
            let c = cm.get(i, 0);
            for x in value.row_mut(i) {
                *x *= c;
            }
        }
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| s * x);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let ng = self.needs(a);
        self.push(value, Op::Offset(a), ng)
    }

    /// `order`-th derivative of `act` applied elementwise.
    pub fn act(&mut self, a: Var, act: Activation, order: u8) -> Var {
        let value = self.value(a).map(|x| act.eval(x, order));
        let ng = self.needs(a);
        self.push(value, Op::Act(a, act, order), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::ln);
        let ng = self.needs(a);
        self.push(value, Op::Ln(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(value, Op::Square(a), ng)
    }

    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| math::powf(x, p));
        let ng = self.needs(a);
        self.push(value, Op::PowConst(a, p), ng)
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let value = Matrix::column(&self.value(a).col_values(j));
        let ng = self.needs(a);
        self.push(value, Op::Column(a, j), ng)
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "hcat height");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::HCat(parts.to_vec()), ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_fn(m.rows(), 1, |i, _| m.row(i).iter().sum());
        let ng = self.needs(a);
        self.push(value, Op::RowSum(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let n = (m.rows() * m.cols()) as f64;
        let value = Matrix::scalar(m.sum() / n);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Elementwise map with externally computed values and local derivative.
    pub fn mapped(&mut self, a: Var, value: Matrix, derivative: Matrix) -> Var {
        assert_eq!(value.shape(), self.value(a).shape(), "mapped value shape");
        assert_eq!(derivative.shape(), value.shape(), "mapped derivative shape");
        let ng = self.needs(a);
        self.push(value, Op::Mapped(a, derivative), ng)
    }

    /// Reverse pass from `output` seeded with `seed` (same shape as the
    /// output). For a scalar loss pass `Matrix::scalar(1.0)`.
    pub fn backward(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "backward seed shape");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, contribution: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&contribution, 1.0),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let ga = linalg::matmul_nt(g, self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let gb = linalg::matmul_tn(self.value(*a), g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*row) {
                    let mut r = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, x) in r.row_mut(0).iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *row, r);
                }
                self.accumulate(grads, *a, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::MulCol(a, col) => {
                let (am, cm) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        let c = cm.get(i, 0);
                        for x in ga.row_mut(i) {
                            *x *= c;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*col) {
                    let gc = Matrix::from_fn(g.rows(), 1, |i, _| linalg::dot(g.row(i), am.row(i)));
                    self.accumulate(grads, *col, gc);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| s * x)),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::Act(a, act, order) => {
                let x = self.value(*a);
                let local = x.map(|z| act.eval(z, order + 1));
                self.accumulate(grads, *a, g.zip_map(&local, |u, d| u * d));
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |u, e| u * e)),
            Op::Ln(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |u, x| u / x)),
            Op::Square(a) => self.accumulate(grads, *a, g.zip_map(self.value(*a), |u, x| 2.0 * u * x)),
            Op::PowConst(a, p) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(x, |u, x| u * p * math::powf(x, p - 1.0)));
            }
            Op::Column(a, j) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for i in 0..am.rows() {
                    ga.set(i, *j, g.get(i, 0));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::HCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.needs(p) {
                        let gp = Matrix::from_fn(g.rows(), cols, |i, j| g.get(i, offset + j));
                        self.accumulate(grads, p, gp);
                    }
                    offset += cols;
                }
            }
            Op::RowSum(a) => {
                let am = self.value(*a);
                let ga = Matrix::from_fn(am.rows(), am.cols(), |i, _| g.get(i, 0));
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let am = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(am.rows(), am.cols(), g.get(0, 0)));
            }
            Op::Mean(a) => {
                let am = self.value(*a);
                let n = (am.rows() * am.cols()) as f64;
                self.accumulate(grads, *a, Matrix::filled(am.rows(), am.cols(), g.get(0, 0) / n));
            }
            Op::Mapped(a, d) => self.accumulate(grads, *a, g.zip_map(d, |u, d| u * d)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = build(&mut tape, x);
        let grads = tape.backward(y, Matrix::scalar(1.0));
        let g = grads.get(x).unwrap().clone();
        let h = 1e-6;
        for k in 0..x0.as_slice().len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_mut_slice()[k] += delta;
                let mut t = Tape::new();
                let v = t.param(xp);
                let out = build(&mut t, v);
                t.scalar(out)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.as_slice()[k];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "coordinate {k}: fd {fd} vs {an}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| 0.3 + 0.2 * libm::sin(1.7 * i as f64 + 0.9 * j as f64))
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        fd_check(
            |t, x| {
                let e = t.exp(x);
                let l = t.ln(e);
                let s = t.square(l);
                let p = t.pow_const(x, 1.7);
                let m = t.mul(s, p);
                let a = t.act(m, Activation::Softplus, 0);
                let d = t.act(a, Activation::Softplus, 1);
                let o = t.offset(d, 0.5);
                let sc = t.scale(o, -1.3);
                t.mean(sc)
            },
            sample(3, 2),
        );
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let w = sample(2, 4);
        let row = Matrix::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.05]);
        fd_check(
            move |t, x| {
                let wv = t.constant(w.clone());
                let rv = t.param(row.clone());
                let z = t.matmul(x, wv);
                let z = t.add_row(z, rv);
                let c = t.column(z, 2);
                let zc = t.mul_col(z, c);
                let cat = t.hcat(&[zc, c]);
                let rs = t.row_sum(cat);
                let sub = t.sub(rs, c);
                let add = t.add(sub, rs);
                t.sum(add)
            },
            sample(3, 2),
        );
    }

    #[test]
    fn mapped_op_uses_supplied_derivative() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let y = t.mapped(x, Matrix::from_vec(1, 2, vec![1.0, 8.0]), Matrix::from_vec(1, 2, vec![3.0, 12.0]));
        let s = t.sum(y);
        let g = t.backward(s, Matrix::scalar(1.0));
        assert_eq!(g.get(x).unwrap().as_slice(), &[3.0, 12.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let p = t.param(Matrix::scalar(3.0));
        let y = t.mul(c, p);
        let g = t.backward(y, Matrix::scalar(1.0));
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().get(0, 0), 2.0);
    }
}
