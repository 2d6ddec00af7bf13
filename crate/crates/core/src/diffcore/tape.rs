use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Added under the square root of every L2 normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Every op name accepted by [`Tape::apply`].
pub const NAMED_OPS: &[&str] = &[
    "matmul",
    "add",
    "add_bias",
    "hadamard",
    "concat_cols",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "l2_normalize",
    "softmax",
    "log_softmax",
    "mean",
    "sum",
    "transpose",
    "diag",
    "logsumexp",
    "concat",
    "stack_rows",
];

/// Storage precision of values and gradients recorded on a tape.
///
/// Arithmetic always runs in `f64`; under `F32` every op output and every
/// accumulated gradient is rounded to the nearest `f32`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }

    fn round_all(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Deliberately broken backward rules, used to confirm that the
/// verification suites catch them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU passes the upstream gradient through unmasked.
    ReluPassThrough,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    L2Normalize(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Mean(Var),
    Sum(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Transpose(Var),
    ConcatCols(Var, Var),
    LogSumExpRows(Var, Rc<[bool]>),
    Diag(Var),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of a computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so every op's inputs precede it.
/// Build a fresh tape per step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
    fault: Option<Fault>,
}

/// Gradients of a scalar loss with respect to the tape's trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient for `leaf`. Leaves that did not participate get zeros.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.grads.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            precision,
            ..Tape::default()
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn precision(&self) -> Precision {
        self.precision
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        self.precision.round_all(value.data_mut());
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, mut data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        self.precision.round_all(&mut data);
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Dispatch a parameterless op by name; see [`NAMED_OPS`].
    pub fn apply(&mut self, op: &str, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{op} takes {n} input(s), got {}",
                    inputs.len()
                )))
            }
        };
        match op {
            "matmul" | "add" | "add_bias" | "hadamard" | "concat_cols" => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match op {
                    "matmul" => self.matmul(a, b),
                    "add" => self.add(a, b),
                    "add_bias" => self.add_bias(a, b),
                    "hadamard" => self.hadamard(a, b),
                    _ => self.concat_cols(a, b),
                }
            }
            "relu" | "sigmoid" | "exp" | "log" | "l2_normalize" | "softmax" | "log_softmax"
            | "mean" | "sum" | "transpose" | "diag" | "logsumexp" => {
                arity(1)?;
                let a = inputs[0];
                match op {
                    "relu" => Ok(self.relu(a)),
                    "sigmoid" => Ok(self.sigmoid(a)),
                    "exp" => Ok(self.exp(a)),
                    "log" => self.log(a),
                    "l2_normalize" => Ok(self.l2_normalize(a)),
                    "softmax" => Ok(self.softmax(a)),
                    "log_softmax" => Ok(self.log_softmax(a)),
                    "mean" => Ok(self.mean(a)),
                    "sum" => Ok(self.sum(a)),
                    "transpose" => self.transpose(a),
                    "diag" => self.diag(a),
                    _ => {
                        let mask = vec![true; self.value(a).len()];
                        self.logsumexp_rows(a, &mask)
                    }
                }
            }
            "concat" => self.concat(inputs),
            "stack_rows" => self.stack_rows(inputs),
            _ => Err(Error::invalid(format!("unsupported op `{op}`"))),
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`; a 1-D left operand is a row vector and
    /// yields a 1-D result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k) = match sa.len() {
            1 => (1, sa[0]),
            2 => (sa[0], sa[1]),
            _ => return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb }),
        };
        if sb.len() != 2 || sb[0] != k {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let n = sb[1];
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let shape = if sa.len() == 1 { vec![n] } else { vec![m, n] };
        Ok(self.push(shape, out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.data(a), self.data(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of `a` (trailing dim `n`).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa.is_empty() || sa[sa.len() - 1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "add_bias", lhs: sa, rhs: sb });
        }
        let n = sb[0];
        let b = self.data(bias);
        let out = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % n])
            .collect();
        Ok(self.push(sa, out, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let out = zip(self.data(a), self.data(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Hadamard(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(i) = self.data(a).iter().position(|&x| !(x > 0.0)) {
            return Err(Error::invalid(format!(
                "log of non-positive value {} at index {i}",
                self.data(a)[i]
            )));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, &[a])
    }

    /// Row-wise `x / max(|x|, NORM_EPS)`.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let n = row_norm(row);
            out.extend(row.iter().map(|x| x / n));
        }
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::L2Normalize(a), &[a])
    }

    /// Row-wise softmax over the trailing dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            out.extend(softmax_row(row));
        }
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let lse = logsumexp(row.iter().copied());
            out.extend(row.iter().map(|x| x - lse));
        }
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::LogSoftmax(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Vec::new(), vec![m], Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum::<f64>();
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    /// Flattens every input and joins them into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks equal-length vectors into an `[N, F]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = match rows.first() {
            Some(&r) => self.shape(r).to_vec(),
            None => return Err(Error::invalid("stack_rows of zero tensors")),
        };
        if first.len() != 1 {
            return Err(Error::InvalidShape {
                shape: first,
                reason: "stack_rows expects vectors".into(),
            });
        }
        let mut out = Vec::with_capacity(first[0] * rows.len());
        for &r in rows {
            if self.shape(r) != first.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: first,
                    rhs: self.shape(r).to_vec(),
                });
            }
            out.extend_from_slice(self.data(r));
        }
        Ok(self.push(vec![rows.len(), first[0]], out, Op::StackRows(rows.to_vec()), rows))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || i >= s[0] {
            return Err(Error::invalid(format!("row {i} out of range for shape {s:?}")));
        }
        let out = self.value(a).row(i).to_vec();
        Ok(self.push(vec![s[1]], out, Op::Row(a, i), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s,
                reason: "transpose expects a matrix".into(),
            });
        }
        let out = transpose_raw(self.data(a), s[0], s[1]);
        Ok(self.push(vec![s[1], s[0]], out, Op::Transpose(a), &[a]))
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::ShapeMismatch { op: "concat_cols", lhs: sa, rhs: sb });
        }
        let (m, p, q) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            out.extend_from_slice(&da[r * p..(r + 1) * p]);
            out.extend_from_slice(&db[r * q..(r + 1) * q]);
        }
        Ok(self.push(vec![m, p + q], out, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row-wise `log sum exp` over the entries where `mask` is true.
    /// Evaluated with max subtraction; every row needs at least one entry.
    pub fn logsumexp_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::ShapeMismatch {
                op: "logsumexp_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(t.rows());
        for (row, m) in t.data().chunks(c).zip(mask.chunks(c)) {
            if !m.iter().any(|&k| k) {
                return Err(Error::invalid("logsumexp row with every entry masked"));
            }
            out.push(logsumexp(row.iter().zip(m).filter(|(_, &k)| k).map(|(&x, _)| x)));
        }
        let n = out.len();
        Ok(self.push(vec![n], out, Op::LogSumExpRows(a, mask.into()), &[a]))
    }

    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::InvalidShape {
                shape: s,
                reason: "diag expects a square matrix".into(),
            });
        }
        let n = s[0];
        let out = (0..n).map(|i| self.data(a)[i * n + i]).collect();
        Ok(self.push(vec![n], out, Op::Diag(a), &[a]))
    }

    /// Single element of a flattened tensor, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let d = self.data(a);
        if index >= d.len() {
            return Err(Error::invalid(format!(
                "index {index} out of range for {} elements",
                d.len()
            )));
        }
        let v = d[index];
        Ok(self.push(Vec::new(), vec![v], Op::Pick(a, index), &[a]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. Every trainable leaf gets an entry,
    /// zero-filled when it does not reach the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let p = self.precision;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let y = node.value.data();
            let mut send = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib) {
                            *a = p.round(*a + c);
                        }
                    }
                    slot @ None => {
                        let mut c = contrib;
                        p.round_all(&mut c);
                        *slot = Some(c);
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let sa = self.shape(*a);
                    let (m, k) = if sa.len() == 1 { (1, sa[0]) } else { (sa[0], sa[1]) };
                    let n = self.shape(*b)[1];
                    let (da, db) = (self.data(*a), self.data(*b));
                    if self.nodes[a.0].requires_grad {
                        let bt = transpose_raw(db, k, n);
                        send(*a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if self.nodes[b.0].requires_grad {
                        let at = transpose_raw(da, m, k);
                        send(*b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddBias(a, b) => {
                    let n = self.shape(*b)[0];
                    let mut gb = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    send(*a, g);
                    send(*b, gb);
                }
                Op::Hadamard(a, b) => {
                    send(*a, zip(&g, self.data(*b), |x, y| x * y));
                    send(*b, zip(&g, self.data(*a), |x, y| x * y));
                }
                Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
                Op::Relu(a) => {
                    if self.fault == Some(Fault::ReluPassThrough) {
                        send(*a, g);
                    } else {
                        let x = self.data(*a);
                        send(*a, zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                    }
                }
                Op::Sigmoid(a) => send(*a, zip(&g, y, |gv, s| gv * s * (1.0 - s))),
                Op::Exp(a) => send(*a, zip(&g, y, |gv, e| gv * e)),
                Op::Log(a) => send(*a, zip(&g, self.data(*a), |gv, x| gv / x)),
                Op::L2Normalize(a) => {
                    let x = self.data(*a);
                    let c = node.value.cols();
                    let mut dx = Vec::with_capacity(x.len());
                    for ((xr, yr), gr) in x.chunks(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let n = row_norm(xr);
                        if n > NORM_EPS {
                            let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            dx.extend(yr.iter().zip(gr).map(|(yv, gv)| (gv - yv * yg) / n));
                        } else {
                            // Inside the guard the op is a fixed scaling.
                            dx.extend(gr.iter().map(|gv| gv / NORM_EPS));
                        }
                    }
                    send(*a, dx);
                }
                Op::Softmax(a) => {
                    let c = node.value.cols();
                    let mut dx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                        let gy: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - gy)));
                    }
                    send(*a, dx);
                }
                Op::LogSoftmax(a) => {
                    let c = node.value.cols();
                    let mut dx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                        let gs: f64 = gr.iter().sum();
                        dx.extend(yr.iter().zip(gr).map(|(lp, gv)| gv - lp.exp() * gs));
                    }
                    send(*a, dx);
                }
                Op::Mean(a) => {
                    let n = self.data(*a).len();
                    send(*a, vec![g[0] / n as f64; n]);
                }
                Op::Sum(a) => {
                    let n = self.data(*a).len();
                    send(*a, vec![g[0]; n]);
                }
                Op::Concat(parts) | Op::StackRows(parts) => {
                    let mut off = 0;
                    for &v in parts {
                        let n = self.data(v).len();
                        send(v, g[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Row(a, i) => {
                    let mut dx = vec![0.0; self.data(*a).len()];
                    let c = g.len();
                    dx[i * c..(i + 1) * c].copy_from_slice(&g);
                    send(*a, dx);
                }
                Op::Transpose(a) => {
                    let s = self.shape(*a);
                    send(*a, transpose_raw(&g, s[1], s[0]));
                }
                Op::ConcatCols(a, b) => {
                    let p = self.shape(*a)[1];
                    let q = self.shape(*b)[1];
                    let mut ga = Vec::with_capacity(g.len());
                    let mut gb = Vec::with_capacity(g.len());
                    for r in g.chunks(p + q) {
                        ga.extend_from_slice(&r[..p]);
                        gb.extend_from_slice(&r[p..]);
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::LogSumExpRows(a, mask) => {
                    let x = self.data(*a);
                    let c = self.value(*a).cols();
                    let mut dx = vec![0.0; x.len()];
                    for (r, (xr, mr)) in x.chunks(c).zip(mask.chunks(c)).enumerate() {
                        let lse = y[r];
                        for j in 0..c {
                            if mr[j] {
                                dx[r * c + j] = g[r] * (xr[j] - lse).exp();
                            }
                        }
                    }
                    send(*a, dx);
                }
                Op::Diag(a) => {
                    let n = g.len();
                    let mut dx = vec![0.0; n * n];
                    for i in 0..n {
                        dx[i * n + i] = g[i];
                    }
                    send(*a, dx);
                }
                Op::Pick(a, index) => {
                    let mut dx = vec![0.0; self.data(*a).len()];
                    dx[*index] = g[0];
                    send(*a, dx);
                }
            }
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let shape = node.value.shape().to_vec();
                let t = match grads.get_mut(idx).and_then(Option::take) {
                    Some(d) => Tensor::from_parts(shape, d),
                    None => Tensor::zeros(&shape),
                };
                out.insert(Var(idx), t);
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
