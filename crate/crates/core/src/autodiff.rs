//! Reverse-mode differentiation on a tape of tensor operations.
//!
//! Backward rules are themselves emitted as tape operations, so a gradient
//! obtained from [`Tape::grad`] is an ordinary [`Var`] that can be fed into
//! further computation and differentiated again. This is what the attack loss
//! needs: `‖∇ₓg̃(x) − hᵗ‖²` is differentiated with respect to the parameters.
//!
//! Non-smooth points follow the almost-everywhere convention: the derivative
//! of relu is the step function (0 at the kink) and its second derivative is 0;
//! the derivative of `abs` is `sign` with `sign(0) = 0`.
//!
//! All tensors on the tape are 2-d (`rows x cols`); rows are samples.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_flags, Tensor};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A linear map applied independently to every row that is its own adjoint,
/// e.g. a per-sample orthogonal projector. Being self-adjoint, the same map
/// serves as its backward rule.
pub trait SymmetricRowMap: Send + Sync {
    fn dim(&self) -> usize;
    fn rows(&self) -> usize;
    /// Writes `M_row · input` into `out`.
    fn apply_row(&self, row: usize, input: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `n x m` plus a `1 x m` row added to every row.
    AddRow(Var, Var),
    /// `n x m -> 1 x m`
    SumRows(Var),
    /// `1 x m -> n x m`
    BroadcastRows(Var, usize),
    /// `n x m -> n x 1`
    SumCols(Var),
    /// `n x 1 -> n x m`
    BroadcastCols(Var, usize),
    /// everything `-> 1 x 1`
    Sum(Var),
    /// `1 x 1 -> n x m`
    BroadcastScalar(Var, usize, usize),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Abs(Var),
    Sigmoid(Var),
    Softplus(Var, f64),
    /// Row-wise softmax.
    Softmax(Var),
    /// Row-wise log-softmax.
    LogSoftmax(Var),
    RowMap(Var, Arc<dyn SymmetricRowMap>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Which output entries seed the backward pass in [`grad_input`].
#[derive(Debug, Clone, PartialEq)]
pub enum OutputSelect {
    /// The output is already `1 x 1`.
    Scalar,
    /// Column `k` of every row.
    Index(usize),
    /// Column `ks[r]` of row `r`.
    PerRow(Vec<usize>),
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn as_2d(t: Tensor) -> Tensor {
        let (r, c) = (t.rows(), t.cols());
        if t.ndim() == 2 {
            t
        } else {
            Tensor::from_parts(vec![r, c], t.into_data())
        }
    }

    /// A differentiable input (parameter or data point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Self::as_2d(value), Op::Leaf, true)
    }

    /// A value treated as constant by differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Self::as_2d(value), Op::Constant, false)
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf | Op::Constant => unreachable!("leaves carry their own values"),
            Op::MatMul { a, b, ta, tb } => matmul_flags(val(a), val(b), *ta, *tb)?,
            Op::Add(a, b) => val(a).zip_map(val(b), |x, y| x + y)?,
            Op::Sub(a, b) => val(a).zip_map(val(b), |x, y| x - y)?,
            Op::Mul(a, b) => val(a).zip_map(val(b), |x, y| x * y)?,
            Op::AddRow(a, row) => {
                let (a, row) = (val(a), val(row));
                let m = a.cols();
                if row.shape() != [1, m] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![1, m],
                        found: row.shape().to_vec(),
                    });
                }
                let r = row.data();
                let data = a
                    .data()
                    .chunks(m)
                    .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
                    .collect();
                Tensor::from_parts(vec![a.rows(), m], data)
            }
            Op::SumRows(a) => {
                let a = val(a);
                let m = a.cols();
                let mut out = vec![0.0; m];
                for chunk in a.data().chunks(m) {
                    for (o, x) in out.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
                Tensor::from_parts(vec![1, m], out)
            }
            Op::BroadcastRows(a, n) => {
                let a = val(a);
                Tensor::from_parts(vec![*n, a.cols()], a.data().repeat(*n))
            }
            Op::SumCols(a) => {
                let a = val(a);
                let data = a.data().chunks(a.cols()).map(|c| c.iter().sum()).collect();
                Tensor::from_parts(vec![a.rows(), 1], data)
            }
            Op::BroadcastCols(a, m) => {
                let a = val(a);
                let data = a
                    .data()
                    .iter()
                    .flat_map(|&x| std::iter::repeat(x).take(*m))
                    .collect();
                Tensor::from_parts(vec![a.rows(), *m], data)
            }
            Op::Sum(a) => Tensor::scalar(val(a).sum()),
            Op::BroadcastScalar(a, n, m) => Tensor::filled(&[*n, *m], val(a).item()),
            Op::Scale(a, c) => val(a).map(|x| c * x),
            Op::AddScalar(a, c) => val(a).map(|x| x + c),
            Op::Relu(a) => val(a).map(|x| x.max(0.0)),
            Op::Abs(a) => val(a).map(f64::abs),
            Op::Sigmoid(a) => val(a).map(sigmoid),
            Op::Softplus(a, beta) => val(a).map(|x| softplus(x, *beta)),
            Op::Softmax(a) => row_softmax(val(a)),
            Op::LogSoftmax(a) => row_log_softmax(val(a)),
            Op::RowMap(a, map) => {
                let a = val(a);
                let (n, m) = (a.rows(), a.cols());
                if map.dim() != m || map.rows() != n {
                    return Err(Error::ShapeMismatch {
                        expected: vec![map.rows(), map.dim()],
                        found: vec![n, m],
                    });
                }
                let mut out = vec![0.0; n * m];
                for (r, (src, dst)) in a.data().chunks(m).zip(out.chunks_mut(m)).enumerate() {
                    map.apply_row(r, src, dst);
                }
                Tensor::from_parts(vec![n, m], out)
            }
        })
    }

    fn operands(op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::SumCols(a)
            | Op::BroadcastCols(a, _)
            | Op::Sum(a)
            | Op::BroadcastScalar(a, _, _)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::RowMap(a, _) => vec![*a],
        }
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.compute(&op)?;
        let needs = Self::operands(&op).iter().any(|&v| self.needs(v));
        Ok(self.push(value, op, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        self.record(Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow(a, row))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.record(Op::SumRows(a)).expect("sum_rows is total")
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        if self.shape2(a).0 != 1 {
            return Err(Error::Contract("broadcast_rows needs a single row".into()));
        }
        self.record(Op::BroadcastRows(a, n))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.record(Op::SumCols(a)).expect("sum_cols is total")
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        if self.shape2(a).1 != 1 {
            return Err(Error::Contract("broadcast_cols needs a single column".into()));
        }
        self.record(Op::BroadcastCols(a, m))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.record(Op::Sum(a)).expect("sum is total")
    }

    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if !self.value(a).is_scalar() {
            return Err(Error::Contract("broadcast_scalar needs a 1x1 value".into()));
        }
        self.record(Op::BroadcastScalar(a, rows, cols))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::Scale(a, c)).expect("scale is total")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.record(Op::AddScalar(a, c)).expect("add_scalar is total")
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.record(Op::Relu(a)).expect("relu is total")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.record(Op::Abs(a)).expect("abs is total")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.record(Op::Sigmoid(a)).expect("sigmoid is total")
    }

    /// `(1/β)·ln(1 + e^{βx})`.
    pub fn softplus(&mut self, a: Var, beta: f64) -> Var {
        self.record(Op::Softplus(a, beta)).expect("softplus is total")
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.record(Op::Softmax(a)).expect("softmax is total")
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.record(Op::LogSoftmax(a)).expect("log_softmax is total")
    }

    pub fn row_map(&mut self, a: Var, map: Arc<dyn SymmetricRowMap>) -> Result<Var> {
        self.record(Op::RowMap(a, map))
    }

    /// `Σ (a − b)²` as a `1 x 1` value.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if !self.value(y).is_scalar() {
            return Err(Error::Contract(format!(
                "gradient needs a scalar output, found shape {:?}",
                self.value(y).shape()
            )));
        }
        let seed = self.constant(Tensor::scalar(1.0));
        self.backward(y, seed, wrt)
    }

    /// Vector-Jacobian product: gradients of `⟨seed, y⟩`.
    pub fn backward(&mut self, y: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.value(seed).expect_shape(self.value(y).shape())?;
        // Only nodes downstream of some `wrt` variable can carry a useful
        // adjoint; skipping the rest avoids e.g. weight gradients when only
        // the input gradient is requested.
        let mut relevant = vec![false; y.0 + 1];
        for &w in wrt {
            if w.0 <= y.0 && self.needs(w) {
                relevant[w.0] = true;
            }
        }
        for i in 0..=y.0 {
            if !relevant[i] && self.nodes[i].needs_grad {
                relevant[i] = Self::operands(&self.nodes[i].op).iter().any(|v| relevant[v.0]);
            }
        }
        let mut adjoint: Vec<Option<Var>> = vec![None; y.0 + 1];
        adjoint[y.0] = Some(seed);
        for i in (0..=y.0).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (operand, contribution) in self.backward_rule(Var(i), &op, g, &relevant)? {
                if !relevant[operand.0] {
                    continue;
                }
                adjoint[operand.0] = Some(match adjoint[operand.0] {
                    None => contribution,
                    Some(prev) => self.add(prev, contribution)?,
                });
            }
        }
        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.value(w).shape().to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    fn backward_rule(&mut self, out: Var, op: &Op, g: Var, relevant: &[bool]) -> Result<Vec<(Var, Var)>> {
        let want = |v: Var| relevant[v.0];
        Ok(match *op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul { a, b, ta, tb } => {
                let mut res = Vec::with_capacity(2);
                if want(a) {
                    let da = if !ta {
                        self.matmul_t(g, b, false, !tb)?
                    } else {
                        self.matmul_t(b, g, tb, true)?
                    };
                    res.push((a, da));
                }
                if want(b) {
                    let db = if !tb {
                        self.matmul_t(a, g, !ta, false)?
                    } else {
                        self.matmul_t(g, a, true, ta)?
                    };
                    res.push((b, db));
                }
                res
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let mut res = vec![(a, g)];
                if want(b) {
                    res.push((b, self.neg(g)));
                }
                res
            }
            Op::Mul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if want(a) {
                    res.push((a, self.mul(g, b)?));
                }
                if want(b) {
                    res.push((b, self.mul(g, a)?));
                }
                res
            }
            Op::AddRow(a, row) => {
                let mut res = vec![(a, g)];
                if want(row) {
                    res.push((row, self.sum_rows(g)));
                }
                res
            }
            Op::SumRows(a) => {
                let n = self.shape2(a).0;
                vec![(a, self.broadcast_rows(g, n)?)]
            }
            Op::BroadcastRows(a, _) => vec![(a, self.sum_rows(g))],
            Op::SumCols(a) => {
                let m = self.shape2(a).1;
                vec![(a, self.broadcast_cols(g, m)?)]
            }
            Op::BroadcastCols(a, _) => vec![(a, self.sum_cols(g))],
            Op::Sum(a) => {
                let (n, m) = self.shape2(a);
                vec![(a, self.broadcast_scalar(g, n, m)?)]
            }
            Op::BroadcastScalar(a, _, _) => vec![(a, self.sum(g))],
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a, _) => vec![(a, g)],
            Op::Relu(a) => {
                let step = self.constant(self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
                vec![(a, self.mul(g, step)?)]
            }
            Op::Abs(a) => {
                let sign = self.constant(self.value(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }));
                vec![(a, self.mul(g, sign)?)]
            }
            Op::Sigmoid(a) => {
                // σ' = σ(1 − σ), written in terms of the recorded output.
                let one_minus = self.scale(out, -1.0);
                let one_minus = self.add_scalar(one_minus, 1.0);
                let deriv = self.mul(out, one_minus)?;
                vec![(a, self.mul(g, deriv)?)]
            }
            Op::Softplus(a, beta) => {
                let scaled = self.scale(a, beta);
                let deriv = self.sigmoid(scaled);
                vec![(a, self.mul(g, deriv)?)]
            }
            Op::Softmax(a) => {
                let m = self.shape2(a).1;
                let gy = self.mul(g, out)?;
                let s = self.sum_cols(gy);
                let s = self.broadcast_cols(s, m)?;
                let centered = self.sub(g, s)?;
                vec![(a, self.mul(out, centered)?)]
            }
            Op::LogSoftmax(a) => {
                let m = self.shape2(a).1;
                let p = self.softmax(a);
                let s = self.sum_cols(g);
                let s = self.broadcast_cols(s, m)?;
                let ps = self.mul(p, s)?;
                vec![(a, self.sub(g, ps)?)]
            }
            Op::RowMap(a, ref map) => vec![(a, self.row_map(g, Arc::clone(map))?)],
        })
    }

    /// Recomputes every non-leaf node from its operands and checks that the
    /// stored values are reproduced bit for bit.
    pub fn verify_replay(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            for v in Self::operands(&node.op) {
                if v.0 >= i {
                    return Err(Error::Contract(format!("node {i} consumes later node {}", v.0)));
                }
            }
            let again = self.compute(&node.op)?;
            let same = again
                .data()
                .iter()
                .zip(node.value.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || again.shape() != node.value.shape() {
                return Err(Error::Contract(format!("replay of node {i} diverged")));
            }
        }
        Ok(())
    }
}

/// `∇ₓ` of the selected output entries, recorded on the tape so that it can be
/// differentiated again.
pub fn grad_input(tape: &mut Tape, out: Var, x: Var, select: &OutputSelect) -> Result<Var> {
    let (n, m) = tape.shape2(out);
    let seed = match select {
        OutputSelect::Scalar => {
            if n * m != 1 {
                return Err(Error::Contract(
                    "non-scalar output requires a logit index".into(),
                ));
            }
            Tensor::scalar(1.0)
        }
        OutputSelect::Index(k) => {
            if *k >= m {
                return Err(Error::ClassOutOfRange { index: *k, classes: m });
            }
            one_hot(n, m, |_| *k)
        }
        OutputSelect::PerRow(ks) => {
            if ks.len() != n {
                return Err(Error::LengthMismatch {
                    shape: vec![n],
                    len: ks.len(),
                });
            }
            if let Some(&k) = ks.iter().find(|&&k| k >= m) {
                return Err(Error::ClassOutOfRange { index: k, classes: m });
            }
            one_hot(n, m, |r| ks[r])
        }
    };
    let seed = tape.constant(seed);
    Ok(tape.backward(out, seed, &[x])?[0])
}

fn one_hot(n: usize, m: usize, k: impl Fn(usize) -> usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, m]);
    for r in 0..n {
        t.set(r, k(r), 1.0);
    }
    t
}

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` (0 when both vanish).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = crate::tensor::norm(a).max(crate::tensor::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
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

pub fn softplus(x: f64, beta: f64) -> f64 {
    let z = beta * x;
    // log1p(e^z) = max(z, 0) + log1p(e^{-|z|})
    (z.max(0.0) + (-z.abs()).exp().ln_1p()) / beta
}

fn row_softmax(a: &Tensor) -> Tensor {
    let m = a.cols();
    let mut out = Vec::with_capacity(a.len());
    for row in a.data().chunks(m) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|x| (x - mx).exp()));
        let s: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= s;
        }
    }
    Tensor::from_parts(vec![a.rows(), m], out)
}

fn row_log_softmax(a: &Tensor) -> Tensor {
    let m = a.cols();
    let mut out = Vec::with_capacity(a.len());
    for row in a.data().chunks(m) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    Tensor::from_parts(vec![a.rows(), m], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn rand_tensor(rng: &mut RngState, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    /// Central-difference check of `d sum(w ⊙ f(x)) / dx` for a unary builder.
    fn check_unary(build: impl Fn(&mut Tape, Var) -> Var, avoid_kink: bool) {
        let mut rng = RngState::new(99);
        for trial in 0..100 {
            let mut x = rand_tensor(&mut rng, 2, 3);
            if avoid_kink {
                x = x.map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
            }
            let out_shape = {
                let mut t = Tape::new();
                let xv = t.leaf(x.clone());
                let y = build(&mut t, xv);
                (t.value(y).rows(), t.value(y).cols())
            };
            let w = rand_tensor(&mut rng, out_shape.0, out_shape.1);
            let objective = |xv: &Tensor| {
                let mut t = Tape::new();
                let xv = t.leaf(xv.clone());
                let y = build(&mut t, xv);
                t.value(y).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let y = build(&mut t, xv);
            let wv = t.constant(w.clone());
            let g = t.backward(y, wv, &[xv]).unwrap()[0];
            let analytic = t.value(g).clone();
            let h = 1e-4;
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1.0);
                assert!(err <= 1e-5, "trial {trial} entry {i}: fd {fd} vs {a}");
            }
        }
    }

    #[test]
    fn elementwise_primitives_match_finite_differences() {
        check_unary(|t, x| t.relu(x), true);
        check_unary(|t, x| t.abs(x), true);
        check_unary(|t, x| t.sigmoid(x), false);
        check_unary(|t, x| t.softplus(x, 10.0), false);
        check_unary(|t, x| t.softplus(x, 1.0), false);
        check_unary(|t, x| t.softmax(x), false);
        check_unary(|t, x| t.log_softmax(x), false);
        check_unary(|t, x| t.scale(x, -2.5), false);
        check_unary(|t, x| t.add_scalar(x, 3.0), false);
        check_unary(|t, x| t.mul(x, x).unwrap(), false);
    }

    #[test]
    fn reduction_primitives_match_finite_differences() {
        check_unary(|t, x| t.sum_rows(x), false);
        check_unary(|t, x| t.sum_cols(x), false);
        check_unary(
            |t, x| {
                let s = t.sum(x);
                t.broadcast_scalar(s, 2, 3).unwrap()
            },
            false,
        );
        check_unary(
            |t, x| {
                let s = t.sum_rows(x);
                t.broadcast_rows(s, 2).unwrap()
            },
            false,
        );
        check_unary(
            |t, x| {
                let s = t.sum_cols(x);
                t.broadcast_cols(s, 3).unwrap()
            },
            false,
        );
    }

    #[test]
    fn matmul_all_transpose_flags_match_finite_differences() {
        // x is always 2x3; the partner is shaped so that op(x)·op(b) and
        // op(b)·op(x) are defined for every flag combination.
        let mut rng = RngState::new(5);
        for ta in [false, true] {
            for tb in [false, true] {
                let inner = if ta { 2 } else { 3 };
                let partner = if tb {
                    rand_tensor(&mut rng, 4, inner)
                } else {
                    rand_tensor(&mut rng, inner, 4)
                };
                check_unary(
                    move |t, x| {
                        let b = t.constant(partner.clone());
                        t.matmul_t(x, b, ta, tb).unwrap()
                    },
                    false,
                );
                let outer = if tb { 3 } else { 2 };
                let left = if ta {
                    rand_tensor(&mut rng, outer, 4)
                } else {
                    rand_tensor(&mut rng, 4, outer)
                };
                check_unary(
                    move |t, x| {
                        let a = t.constant(left.clone());
                        t.matmul_t(a, x, ta, tb).unwrap()
                    },
                    false,
                );
            }
        }
    }

    #[test]
    fn add_row_matches_finite_differences() {
        let mut rng = RngState::new(8);
        let base = rand_tensor(&mut rng, 2, 3);
        check_unary(
            move |t, x| {
                let r = t.sum_rows(x);
                let b = t.constant(base.clone());
                t.add_row(b, r).unwrap()
            },
            false,
        );
    }

    #[test]
    fn linear_gradient_is_the_weight() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::matrix(1, 2, vec![0.9, 0.1]).unwrap());
        let x = t.leaf(Tensor::matrix(1, 2, vec![3.0, -7.0]).unwrap());
        let y = t.matmul_t(x, w, false, true).unwrap();
        let g = grad_input(&mut t, y, x, &OutputSelect::Scalar).unwrap();
        assert_eq!(t.value(g).data(), &[0.9, 0.1]);
    }

    #[test]
    fn non_scalar_without_index_is_a_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 3]));
        let y = t.relu(x);
        assert!(matches!(
            grad_input(&mut t, y, x, &OutputSelect::Scalar),
            Err(Error::Contract(_))
        ));
        assert!(matches!(t.grad(y, &[x]), Err(Error::Contract(_))));
        assert!(matches!(
            grad_input(&mut t, y, x, &OutputSelect::Index(3)),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn squared_input_gradient_norm_of_linear_map_has_gradient_2w() {
        let w0 = vec![0.3, -1.2, 2.0];
        let mut t = Tape::new();
        let w = t.leaf(Tensor::matrix(1, 3, w0.clone()).unwrap());
        let x = t.leaf(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let y = t.matmul_t(x, w, false, true).unwrap();
        let gx = grad_input(&mut t, y, x, &OutputSelect::Scalar).unwrap();
        let sq = t.mul(gx, gx).unwrap();
        let loss = t.sum(sq);
        let gw = t.grad(loss, &[w]).unwrap()[0];
        let expected: Vec<f64> = w0.iter().map(|v| 2.0 * v).collect();
        assert_eq!(t.value(gw).data(), expected.as_slice());
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = RngState::new(1);
        let mut t = Tape::new();
        let x = t.leaf(rand_tensor(&mut rng, 4, 5));
        let w = t.leaf(rand_tensor(&mut rng, 3, 5));
        let z = t.matmul_t(x, w, false, true).unwrap();
        let h = t.softplus(z, 10.0);
        let l = t.log_softmax(h);
        let s = t.sum(l);
        let g = t.grad(s, &[x, w]).unwrap();
        let sq = t.mul(g[0], g[0]).unwrap();
        let s2 = t.sum(sq);
        t.grad(s2, &[w]).unwrap();
        t.verify_replay().unwrap();
    }

    struct Diag(Vec<f64>);
    impl SymmetricRowMap for Diag {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn rows(&self) -> usize {
            2
        }
        fn apply_row(&self, _row: usize, input: &[f64], out: &mut [f64]) {
            for ((o, i), d) in out.iter_mut().zip(input).zip(&self.0) {
                *o = i * d;
            }
        }
    }

    #[test]
    fn row_map_matches_finite_differences() {
        let map: Arc<dyn SymmetricRowMap> = Arc::new(Diag(vec![0.5, -1.0, 2.0]));
        check_unary(move |t, x| t.row_map(x, Arc::clone(&map)).unwrap(), false);
    }
}
