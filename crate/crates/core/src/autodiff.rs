//! A small tape-based reverse-mode differentiator over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D [`Tensor`]. Common element-wise and
//! linear-algebra ops are built in; heavier, domain-specific blocks (the
//! recurrent cell, the beamformer, CTC) implement [`CustomOp`] and supply
//! their own vector-Jacobian product.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable block with a hand-written backward pass.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients for each input (same shapes as `inputs`) given the upstream
    /// gradient `grad` on `output`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    FlipRows(Var),
    LogSoftmaxRows(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient, or zeros of `shape` when nothing flowed into `v`.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + row`, with `row` (1 x n) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Var {
        let k = self.constant(c.clone());
        self.add(a, k)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts agree");
        self.push(v, Op::ConcatCols(a, b))
    }

    pub fn flip_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).slice(s![..;-1, ..]).to_owned();
        self.push(v, Op::FlipRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: Vec<Var>, value: Tensor) -> Var {
        self.push(value, Op::Custom(op, inputs))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before a forward pass".into()));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, gr);
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, &g * *scale),
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::Sigmoid(a) => {
                    let ga = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = Zip::from(&g)
                        .and(&node.value)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).dim();
                    acc(&mut grads, *a, Tensor::from_elem(shape, g[[0, 0]]));
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..na]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., na..]).to_owned());
                }
                Op::FlipRows(a) => acc(&mut grads, *a, g.slice(s![..;-1, ..]).to_owned()),
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g.clone();
                    for (mut row, y) in ga.rows_mut().into_iter().zip(node.value.rows()) {
                        let total: f64 = row.sum();
                        Zip::from(&mut row)
                            .and(&y)
                            .for_each(|gx, &y| *gx -= y.exp() * total);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Custom(op, inputs) => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    debug_assert_eq!(gs.len(), inputs.len(), "{} backward arity", op.name());
                    for (v, gi) in inputs.iter().zip(gs) {
                        acc(&mut grads, *v, gi);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }
}

pub mod check {
    //! Central-difference gradient checking.
    use super::*;

    /// Compares analytic gradients of `build` (which records a scalar loss
    /// from the given leaves) with central differences. Returns the worst
    /// relative error `|a - fd| / max(floor, |a|)`.
    pub fn max_rel_error(
        inputs: &[Tensor],
        h: f64,
        floor: f64,
        build: &dyn Fn(&mut Tape, &[Var]) -> Var,
    ) -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&mut tape, &leaves);
        let grads = tape.backward(loss).unwrap();
        let eval = |xs: &[Tensor]| -> f64 {
            let mut t = Tape::new();
            let ls: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let l = build(&mut t, &ls);
            t.scalar(l)
        };
        let mut worst: f64 = 0.0;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(leaves[k], x.dim());
            for idx in 0..x.len() {
                let (r, c) = (idx / x.ncols(), idx % x.ncols());
                let mut plus = inputs.to_vec();
                plus[k][[r, c]] += h;
                let mut minus = inputs.to_vec();
                minus[k][[r, c]] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                let err = (a - fd).abs() / floor.max(a.abs());
                worst = worst.max(err);
            }
        }
        worst
    }
}
