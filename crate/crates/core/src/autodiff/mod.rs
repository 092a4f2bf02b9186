//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation eagerly. The backward pass is itself
//! expressed in tape operations, so gradients can either be read off as plain
//! tensors ([`Tape::backward`], [`Tape::gradients`]) or kept on the tape as
//! differentiable nodes ([`Tape::grad_graph`]) and differentiated again. The
//! second form is what the one-step lookahead hypergradient needs.

mod hypergrad;

use std::collections::BTreeMap;

pub use hypergrad::{hypergradient, HypergradMethod};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Pow(Var, f64),
    Sum(Var),
    Mean(Var),
    MaxRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Clamp(Var, f64, f64),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf { .. } => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => [Some(a), Some(b)],
            Transpose(a) | Reshape(a) | Relu(a) | Sigmoid(a) | Exp(a) | Log(a) | Pow(a, _)
            | Sum(a) | Mean(a) | MaxRows(a, _) | SoftmaxRows(a) | AddScalar(a)
            | MulScalar(a, _) | Clamp(a, _, _) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by the leaf they belong to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.map.get(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.map.iter().map(|(v, t)| (*v, t))
    }

    /// Gradients for `vars`, in order. Panics if one was not requested.
    pub fn collect(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|v| self.map[v].clone()).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn finite(value: Tensor, stage: &str) -> Result<Tensor> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical(stage))
    }
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

    /// A trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: false })
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn values(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.value(v).clone()).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = finite(self.value(a).add(self.value(b))?, "add")?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = finite(self.value(a).sub(self.value(b))?, "sub")?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = finite(self.value(a).mul(self.value(b))?, "mul")?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = finite(self.value(a).matmul(self.value(b))?, "matmul")?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = finite(self.value(a).map(f64::exp), "exp")?;
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(&mut self, a: Var, exponent: f64) -> Result<Var> {
        let integral = exponent.fract() == 0.0;
        for &x in self.value(a).data() {
            if (x < 0.0 && !integral) || (x == 0.0 && exponent < 0.0) {
                return Err(Error::Domain(format!("{x} raised to {exponent}")));
            }
        }
        let v = finite(self.value(a).map(|x| x.powf(exponent)), "pow")?;
        Ok(self.push(v, Op::Pow(a, exponent)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        Ok(self.push(v, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        Ok(self.push(v, Op::Mean(a)))
    }

    /// Row-wise maximum as an `r × 1` column plus the winning column per row.
    pub fn max_rows(&mut self, a: Var) -> Result<(Var, Vec<usize>)> {
        let (v, idx) = self.value(a).max_rows()?;
        let var = self.push(v, Op::MaxRows(a, idx.clone()));
        Ok((var, idx))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_rows()?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = finite(self.value(a).map(|x| x + k), "add_scalar")?;
        Ok(self.push(v, Op::AddScalar(a)))
    }

    pub fn mul_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let v = finite(self.value(a).map(|x| x * k), "mul_scalar")?;
        Ok(self.push(v, Op::MulScalar(a, k)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.mul_scalar(a, -1.0)
    }

    /// `k - a`
    pub fn rsub_scalar(&mut self, k: f64, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_scalar(n, k)
    }

    /// Clamp into `[lo, hi]`; the gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::Domain(format!("clamp bounds {lo} > {hi}")));
        }
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        Ok(self.push(v, Op::Clamp(a, lo, hi)))
    }

    /// `a / b` elementwise, as `a * b^-1`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let inv = self.pow(b, -1.0)?;
        self.mul(a, inv)
    }

    /// Row-wise sum of a matrix as an `r × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.value(a).dims2()?;
        let ones = self.constant(Tensor::ones(vec![c, 1])?);
        self.matmul(a, ones)
    }

    /// Repeats an `r × 1` column across `cols` columns.
    pub fn repeat_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let ones = self.constant(Tensor::ones(vec![1, cols])?);
        self.matmul(a, ones)
    }

    /// Adds a `1 × c` row vector to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, _) = self.value(a).dims2()?;
        let ones = self.constant(Tensor::ones(vec![r, 1])?);
        let tiled = self.matmul(ones, row)?;
        self.add(a, tiled)
    }

    /// Column `j` of a matrix as an `r × 1` column.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (_, c) = self.value(a).dims2()?;
        if j >= c {
            return Err(Error::Shape(format!("column {j} of a {c}-column matrix")));
        }
        let mut sel = vec![0.0; c];
        sel[j] = 1.0;
        let sel = self.constant(Tensor::column(&sel)?);
        self.matmul(a, sel)
    }

    // If `t` was produced by broadcasting `target`, sum it back to `target`'s shape.
    fn unbroadcast(&mut self, t: Var, target: Var) -> Result<Var> {
        let target_shape = self.value(target).shape().to_vec();
        if self.value(t).shape() == target_shape.as_slice() {
            return Ok(t);
        }
        let s = self.sum(t)?;
        if self.value(s).shape() == target_shape.as_slice() {
            Ok(s)
        } else {
            self.reshape(s, target_shape)
        }
    }

    fn mask(&mut self, of: Var, keep: impl Fn(f64) -> bool) -> Var {
        let m = self.value(of).map(|x| if keep(x) { 1.0 } else { 0.0 });
        self.constant(m)
    }

    // Adjoint propagation. Returns the adjoint node of every tape entry up to
    // `output` that depends on one of `targets`.
    fn backprop(&mut self, output: Var, targets: &[Var]) -> Result<Vec<Option<Var>>> {
        if !self.value(output).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let end = output.0 + 1;
        let mut needs = vec![false; end];
        for t in targets {
            if t.0 < end {
                needs[t.0] = true;
            }
        }
        for i in 0..end {
            if !needs[i] {
                needs[i] = self.nodes[i].op.inputs().iter().flatten().any(|v| needs[v.0]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        if !needs[output.0] {
            return Ok(adj);
        }
        let seed_shape = self.value(output).shape().to_vec();
        adj[output.0] = Some(self.constant(Tensor::ones(seed_shape)?));

        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !needs[i] {
                continue;
            }
            let out = Var(i);
            let op = self.nodes[i].op.clone();
            let mut contributions: Vec<(Var, Var)> = Vec::with_capacity(2);
            let wants = |v: Var| needs[v.0];
            match op {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    if wants(a) {
                        contributions.push((a, self.unbroadcast(g, a)?));
                    }
                    if wants(b) {
                        contributions.push((b, self.unbroadcast(g, b)?));
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        contributions.push((a, self.unbroadcast(g, a)?));
                    }
                    if wants(b) {
                        let n = self.neg(g)?;
                        contributions.push((b, self.unbroadcast(n, b)?));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        let t = self.mul(g, b)?;
                        contributions.push((a, self.unbroadcast(t, a)?));
                    }
                    if wants(b) {
                        let t = self.mul(g, a)?;
                        contributions.push((b, self.unbroadcast(t, b)?));
                    }
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        let bt = self.transpose(b)?;
                        contributions.push((a, self.matmul(g, bt)?));
                    }
                    if wants(b) {
                        let at = self.transpose(a)?;
                        contributions.push((b, self.matmul(at, g)?));
                    }
                }
                Op::Transpose(a) => contributions.push((a, self.transpose(g)?)),
                Op::Reshape(a) => {
                    let shape = self.value(a).shape().to_vec();
                    contributions.push((a, self.reshape(g, shape)?));
                }
                Op::Relu(a) => {
                    // subgradient 0 at the kink
                    let m = self.mask(a, |x| x > 0.0);
                    contributions.push((a, self.mul(g, m)?));
                }
                Op::Sigmoid(a) => {
                    let one_minus = self.rsub_scalar(1.0, out)?;
                    let t = self.mul(g, out)?;
                    contributions.push((a, self.mul(t, one_minus)?));
                }
                Op::Exp(a) => contributions.push((a, self.mul(g, out)?)),
                Op::Log(a) => {
                    let inv = self.pow(a, -1.0)?;
                    contributions.push((a, self.mul(g, inv)?));
                }
                Op::Pow(a, p) => {
                    let d = self.pow(a, p - 1.0)?;
                    let d = self.mul_scalar(d, p)?;
                    contributions.push((a, self.mul(g, d)?));
                }
                Op::Sum(a) => {
                    let ones = self.constant(Tensor::ones(self.value(a).shape().to_vec())?);
                    contributions.push((a, self.mul(ones, g)?));
                }
                Op::Mean(a) => {
                    let n = self.value(a).numel() as f64;
                    let w = self.constant(Tensor::filled(self.value(a).shape().to_vec(), 1.0 / n)?);
                    contributions.push((a, self.mul(w, g)?));
                }
                Op::MaxRows(a, idx) => {
                    let (r, c) = self.value(a).dims2()?;
                    let mut m = vec![0.0; r * c];
                    for (row, &j) in idx.iter().enumerate() {
                        m[row * c + j] = 1.0;
                    }
                    let m = self.constant(Tensor::matrix(r, c, m)?);
                    let spread = self.repeat_cols(g, c)?;
                    contributions.push((a, self.mul(spread, m)?));
                }
                Op::SoftmaxRows(a) => {
                    let (_, c) = self.value(a).dims2()?;
                    let gs = self.mul(g, out)?;
                    let rs = self.sum_rows(gs)?;
                    let rs = self.repeat_cols(rs, c)?;
                    let t = self.mul(out, rs)?;
                    contributions.push((a, self.sub(gs, t)?));
                }
                Op::AddScalar(a) => contributions.push((a, g)),
                Op::MulScalar(a, k) => contributions.push((a, self.mul_scalar(g, k)?)),
                Op::Clamp(a, lo, hi) => {
                    let m = self.mask(a, |x| (lo..=hi).contains(&x));
                    contributions.push((a, self.mul(g, m)?));
                }
            }
            for (input, c) in contributions {
                adj[input.0] = Some(match adj[input.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }
        Ok(adj)
    }

    fn zero_like(&mut self, v: Var) -> Result<Var> {
        let z = Tensor::zeros(self.value(v).shape().to_vec())?;
        Ok(self.constant(z))
    }

    /// Gradients of a scalar `output` with respect to `wrt`, kept on the tape
    /// as differentiable nodes.
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let adj = self.backprop(output, wrt)?;
        wrt.iter()
            .map(|&v| match adj.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => self.zero_like(v),
            })
            .collect()
    }

    /// Gradients of a scalar `output` with respect to `wrt` as plain tensors.
    /// The tape is left exactly as it was.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Gradients> {
        let mark = self.nodes.len();
        let result = self.backprop(output, wrt).and_then(|adj| {
            let mut map = BTreeMap::new();
            for &v in wrt {
                let t = match adj.get(v.0).copied().flatten() {
                    Some(g) => self.value(g).clone(),
                    None => Tensor::zeros(self.value(v).shape().to_vec())?,
                };
                if !t.is_finite() {
                    return Err(Error::numerical("backward"));
                }
                map.insert(v, t);
            }
            Ok(Gradients { map })
        });
        self.nodes.truncate(mark);
        result
    }

    /// Gradients of a scalar `output` with respect to every trainable leaf
    /// recorded before it.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let leaves: Vec<Var> = (0..=output.0.min(self.nodes.len().saturating_sub(1)))
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf { trainable: true }))
            .map(Var)
            .collect();
        self.gradients(output, &leaves)
    }
}
