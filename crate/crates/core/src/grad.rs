//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Graph`] records every operation as a node in topological order. Nodes
//! are addressed by [`Var`] handles. [`Graph::backward`] walks the tape once in
//! reverse and sums adjoints over shared subexpressions.
//!
//! Binary operations broadcast in two restricted ways only: a one-element
//! operand against any shape, and a `[1 x n]` row against an `[m x n]` matrix.

use crate::error::{Error, Result};
use crate::special;
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Square,
    Sqrt,
    Relu,
    Softplus,
    Neg,
    LnGamma,
    Digamma,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    LogSumExp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: Elementwise,
        lhs: Var,
        rhs: Var,
        lb: Bcast,
        rb: Bcast,
    },
    Unary(Elementwise, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Reduce {
        kind: Reduction,
        x: Var,
        axis: Option<usize>,
    },
    AppendOnes(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    trainable: bool,
    needs_grad: bool,
}

/// Tape of tensor operations. One graph is built per training step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, trainable: bool, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            trainable,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), value, false, ng))
    }

    /// Apply `kind` to one (unary kinds) or two (binary kinds) operands.
    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        if operands.len() != kind.arity() {
            return Err(Error::Contract(format!(
                "{kind:?} takes {} operand(s), got {}",
                kind.arity(),
                operands.len()
            )));
        }
        if kind.arity() == 2 {
            self.binary(kind, operands[0], operands[1])
        } else {
            self.unary(kind, operands[0])
        }
    }

    fn binary(&mut self, kind: Elementwise, lhs: Var, rhs: Var) -> Result<Var> {
        let ls = self.value(lhs).shape().to_vec();
        let rs = self.value(rhs).shape().to_vec();
        let (out_shape, lb, rb) = broadcast_plan(&ls, &rs)?;
        let f: fn(f64, f64) -> f64 = match kind {
            Elementwise::Add => |a, b| a + b,
            Elementwise::Sub => |a, b| a - b,
            Elementwise::Mul => |a, b| a * b,
            Elementwise::Div => |a, b| a / b,
            _ => unreachable!(),
        };
        let cols = *out_shape.last().unwrap_or(&1);
        let (a, b) = (self.value(lhs).data(), self.value(rhs).data());
        let n: usize = out_shape.iter().product();
        let data: Vec<f64> = if lb == Bcast::Same && rb == Bcast::Same {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(a[bidx(lb, i, cols)], b[bidx(rb, i, cols)])).collect()
        };
        let value = Tensor::new(out_shape, data)?;
        let ng = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(Op::Binary { kind, lhs, rhs, lb, rb }, value, false, ng))
    }

    fn unary(&mut self, kind: Elementwise, x: Var) -> Result<Var> {
        let input = self.value(x);
        let check = |ok: fn(f64) -> bool, what: &str| -> Result<()> {
            if let Some(bad) = input.data().iter().find(|&&v| !ok(v)) {
                return Err(Error::domain(format!("{what} of {bad}")));
            }
            Ok(())
        };
        let value = match kind {
            Elementwise::Exp => input.map(f64::exp),
            Elementwise::Log => {
                check(|v| v > 0.0, "log")?;
                input.map(f64::ln)
            }
            Elementwise::Square => input.map(|v| v * v),
            Elementwise::Sqrt => {
                check(|v| v >= 0.0, "sqrt")?;
                input.map(f64::sqrt)
            }
            Elementwise::Relu => input.map(|v| v.max(0.0)),
            Elementwise::Softplus => input.map(softplus),
            Elementwise::Neg => input.map(|v| -v),
            Elementwise::LnGamma => {
                check(|v| v > 0.0, "ln_gamma")?;
                input.map(special::ln_gamma)
            }
            Elementwise::Digamma => {
                check(|v| v > 0.0, "digamma")?;
                input.map(special::digamma)
            }
            _ => unreachable!(),
        };
        let ng = self.needs(x);
        Ok(self.push(Op::Unary(kind, x), value, false, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Div, a, b)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Exp, x).expect("exp is total")
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Elementwise::Log, x)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Square, x).expect("square is total")
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Elementwise::Sqrt, x)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Relu, x).expect("relu is total")
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Softplus, x).expect("softplus is total")
    }
    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Neg, x).expect("neg is total")
    }
    pub fn ln_gamma(&mut self, x: Var) -> Result<Var> {
        self.unary(Elementwise::LnGamma, x)
    }
    pub fn digamma(&mut self, x: Var) -> Result<Var> {
        self.unary(Elementwise::Digamma, x)
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let ng = self.needs(x);
        self.push(Op::Affine { x, scale }, value, false, ng)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn shift(&mut self, x: Var, shift: f64) -> Var {
        self.affine(x, 1.0, shift)
    }

    /// Reduce along `axis` (keeping it with size 1), or over every element
    /// into a `[1 x 1]` tensor when `axis` is `None`.
    pub fn reduce(&mut self, kind: Reduction, x: Var, axis: Option<usize>) -> Result<Var> {
        let input = self.value(x);
        let shape = input.shape();
        let (outer, dim, inner, out_shape) = match axis {
            None => (1, input.len(), 1, vec![1, 1]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::dim(format!("axis {ax} out of range for shape {shape:?}")));
                }
                let mut out_shape = shape.to_vec();
                out_shape[ax] = 1;
                (
                    shape[..ax].iter().product::<usize>(),
                    shape[ax],
                    shape[ax + 1..].iter().product::<usize>(),
                    out_shape,
                )
            }
        };
        let data = input.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| data[(o * dim + d) * inner + i];
                out[o * inner + i] = match kind {
                    Reduction::Sum => (0..dim).map(at).sum(),
                    Reduction::Mean => (0..dim).map(at).sum::<f64>() / dim as f64,
                    Reduction::LogSumExp => {
                        let m = (0..dim).map(at).fold(f64::NEG_INFINITY, f64::max);
                        if m.is_infinite() {
                            m
                        } else {
                            m + (0..dim).map(|d| (at(d) - m).exp()).sum::<f64>().ln()
                        }
                    }
                };
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(Op::Reduce { kind, x, axis }, value, false, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(Reduction::Sum, x, None).expect("full reduction is total")
    }

    /// Sum of a list of scalars.
    pub fn sum_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter();
        let first = *iter.next().ok_or_else(|| Error::Contract("sum of no terms".into()))?;
        iter.try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn append_ones(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).append_ones()?;
        let ng = self.needs(x);
        Ok(self.push(Op::AppendOnes(x), value, false, ng))
    }

    /// Gradients of the scalar `root` with respect to every trainable leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[id] = Some(g);
        }

        let mut grads = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                let g = adj
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| node.value.zeros_like());
                grads.push((Var(id), g));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.needs(a) {
                    let slot = slot(adj, a, av);
                    // dA += G * B^T
                    gemm(m, n, k, 1.0, g.data(), false, bv.data(), true, 1.0, slot.data_mut());
                }
                if self.needs(b) {
                    let slot = slot(adj, b, bv);
                    // dB += A^T * G
                    gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 1.0, slot.data_mut());
                }
            }
            Op::Binary { kind, lhs, rhs, lb, rb } => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                let a = self.value(lhs).data();
                let b = self.value(rhs).data();
                let gd = g.data();
                if self.needs(lhs) {
                    let lv = self.value(lhs);
                    let slot = slot(adj, lhs, lv).data_mut();
                    for (i, &gi) in gd.iter().enumerate() {
                        let (ia, ib) = (bidx(lb, i, cols), bidx(rb, i, cols));
                        slot[ia] += gi
                            * match kind {
                                Elementwise::Add | Elementwise::Sub => 1.0,
                                Elementwise::Mul => b[ib],
                                Elementwise::Div => 1.0 / b[ib],
                                _ => unreachable!(),
                            };
                    }
                }
                if self.needs(rhs) {
                    let rv = self.value(rhs);
                    let slot = slot(adj, rhs, rv).data_mut();
                    for (i, &gi) in gd.iter().enumerate() {
                        let (ia, ib) = (bidx(lb, i, cols), bidx(rb, i, cols));
                        slot[ib] += gi
                            * match kind {
                                Elementwise::Add => 1.0,
                                Elementwise::Sub => -1.0,
                                Elementwise::Mul => a[ia],
                                Elementwise::Div => -a[ia] / (b[ib] * b[ib]),
                                _ => unreachable!(),
                            };
                    }
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.value(x);
                let xd = xv.data();
                let yd = node.value.data();
                let slot = slot(adj, x, xv).data_mut();
                for (i, &gi) in g.data().iter().enumerate() {
                    let local = match kind {
                        Elementwise::Exp => yd[i],
                        Elementwise::Log => 1.0 / xd[i],
                        Elementwise::Square => 2.0 * xd[i],
                        Elementwise::Sqrt => 0.5 / yd[i],
                        Elementwise::Relu => {
                            if xd[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Elementwise::Softplus => sigmoid(xd[i]),
                        Elementwise::Neg => -1.0,
                        Elementwise::LnGamma => special::digamma(xd[i]),
                        Elementwise::Digamma => special::trigamma(xd[i]),
                        _ => unreachable!(),
                    };
                    slot[i] += gi * local;
                }
            }
            Op::Affine { x, scale } => {
                let xv = self.value(x);
                let slot = slot(adj, x, xv).data_mut();
                for (s, &gi) in slot.iter_mut().zip(g.data()) {
                    *s += scale * gi;
                }
            }
            Op::Reduce { kind, x, axis } => {
                let xv = self.value(x);
                let shape = xv.shape();
                let (dim, inner) = match axis {
                    None => (xv.len(), 1),
                    Some(ax) => (shape[ax], shape[ax + 1..].iter().product()),
                };
                let xd = xv.data();
                let yd = node.value.data();
                let slot = slot(adj, x, xv).data_mut();
                for (j, s) in slot.iter_mut().enumerate() {
                    let o = j / (dim * inner);
                    let i = j % inner;
                    let out = o * inner + i;
                    *s += g.data()[out]
                        * match kind {
                            Reduction::Sum => 1.0,
                            Reduction::Mean => 1.0 / dim as f64,
                            Reduction::LogSumExp => (xd[j] - yd[out]).exp(),
                        };
                }
            }
            Op::AppendOnes(x) => {
                let xv = self.value(x);
                let c = xv.cols();
                let slot = slot(adj, x, xv).data_mut();
                for (r, chunk) in slot.chunks_mut(c).enumerate() {
                    let src = &g.data()[r * (c + 1)..r * (c + 1) + c];
                    for (s, &gi) in chunk.iter_mut().zip(src) {
                        *s += gi;
                    }
                }
            }
        }
    }
}

fn slot<'a>(adj: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    adj[v.0].get_or_insert_with(|| like.zeros_like())
}

fn broadcast_plan(ls: &[usize], rs: &[usize]) -> Result<(Vec<usize>, Bcast, Bcast)> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    let is_row_of = |row: &[usize], mat: &[usize]| mat.len() == 2 && row.len() == 2 && row[0] == 1 && row[1] == mat[1];
    if ls == rs {
        Ok((ls.to_vec(), Bcast::Same, Bcast::Same))
    } else if numel(rs) == 1 {
        Ok((ls.to_vec(), Bcast::Same, Bcast::Scalar))
    } else if numel(ls) == 1 {
        Ok((rs.to_vec(), Bcast::Scalar, Bcast::Same))
    } else if is_row_of(rs, ls) {
        Ok((ls.to_vec(), Bcast::Same, Bcast::Row))
    } else if is_row_of(ls, rs) {
        Ok((rs.to_vec(), Bcast::Row, Bcast::Same))
    } else {
        Err(Error::dim(format!("cannot broadcast shapes {ls:?} and {rs:?}")))
    }
}

#[inline]
fn bidx(b: Bcast, i: usize, cols: usize) -> usize {
    match b {
        Bcast::Same => i,
        Bcast::Scalar => 0,
        Bcast::Row => i % cols,
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients of one backward pass, one entry per trainable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads
            .binary_search_by_key(&v, |(var, _)| *var)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    /// Consume into gradients ordered like `vars`.
    pub fn take(mut self, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter()
            .map(|&v| {
                let i = self
                    .grads
                    .binary_search_by_key(&v, |(var, _)| *var)
                    .map_err(|_| Error::Contract(format!("{v:?} is not a trainable leaf")))?;
                Ok(std::mem::replace(&mut self.grads[i].1, Tensor::scalar(0.0)))
            })
            .collect()
    }
}
