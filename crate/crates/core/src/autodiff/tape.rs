//! Reverse-mode differentiation tape.
//!
//! Operations compute their value eagerly. When the tape is recording, each
//! operation also pushes a node describing how to propagate a gradient back
//! to its inputs; a [`Var`] without a node is a constant. The tape is a
//! Wengert list, so a single reverse sweep from the loss yields every
//! parameter gradient.

use std::rc::Rc;

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Tensor};
use crate::error::{shape_err, Error, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Silu,
    Tanh,
    Sigmoid,
    /// `sigmoid(gamma * x) * tanh(x)`: bounded in (-1, 1), zero at zero,
    /// and nearly non-negative for large `gamma`.
    Monotonic { gamma: f64 },
}

/// Largest double below 1. `tanh` rounds to exactly 1 past |x| ~ 19, so
/// the monotonic activation clamps here to stay strictly inside (-1, 1).
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Monotonic { gamma } => {
                (sigmoid(gamma * x) * x.tanh()).clamp(-BELOW_ONE, BELOW_ONE)
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Monotonic { gamma } => {
                let s = sigmoid(gamma * x);
                let t = x.tanh();
                gamma * s * (1.0 - s) * t + s * (1.0 - t * t)
            }
        }
    }
}

/// A value, possibly tracked by a tape.
#[derive(Debug, Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
}

impl Var {
    /// An untracked value.
    pub fn constant(value: Tensor) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }
}

type Parent = Option<usize>;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Parent, Parent),
    Sub(Parent, Parent),
    Mul {
        a: Parent,
        b: Parent,
        av: Rc<Tensor>,
        bv: Rc<Tensor>,
    },
    Scale(Parent, f64),
    LinComb(Vec<(Parent, f64)>),
    MatMul {
        a: Parent,
        b: Parent,
        av: Rc<Tensor>,
        bv: Rc<Tensor>,
        dims: (usize, usize, usize),
    },
    AddBias {
        a: Parent,
        bias: Parent,
        cols: usize,
    },
    Unary {
        a: Parent,
        act: Activation,
        input: Rc<Tensor>,
    },
    Sum(Parent, Vec<usize>),
    Gather {
        a: Parent,
        index: Rc<Vec<usize>>,
    },
    Reshape(Parent),
    ConcatCols {
        parts: Vec<(Parent, usize)>,
        rows: usize,
    },
    ConcatRows(Vec<(Parent, Vec<usize>)>),
    RowMatVec {
        g: Parent,
        v: Parent,
        gv: Rc<Tensor>,
        vv: Rc<Tensor>,
        out_cols: usize,
        in_cols: usize,
    },
    BatchNorm {
        x: Parent,
        gamma: Parent,
        beta: Parent,
        xhat: Tensor,
        inv_std: Vec<f64>,
        gamma_v: Rc<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Gradients produced by [`Tape::backward`], indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`, zero when `var` did not influence the
    /// loss (or is untracked).
    pub fn wrt(&self, var: &Var) -> Tensor {
        var.node
            .and_then(|id| self.grads.get(id).and_then(|g| g.clone()))
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// Recording context for differentiable computation.
#[derive(Debug)]
pub struct Tape {
    recording: bool,
    consumed: bool,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(true)
    }
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new(recording: bool) -> Self {
        Self {
            recording,
            consumed: false,
            nodes: Vec::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: impl FnOnce() -> Op) -> Var {
        let node = if self.recording {
            self.nodes.push(Node {
                op: op(),
                shape: value.shape().to_vec(),
            });
            Some(self.nodes.len() - 1)
        } else {
            None
        };
        Var {
            value: Rc::new(value),
            node,
        }
    }

    /// Registers a differentiable input (a parameter or a probed quantity).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, || Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var::constant(value)
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(out, || Op::Add(a.node, b.node)))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(out, || Op::Sub(a.node, b.node)))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(out, || Op::Mul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
        }))
    }

    pub fn scale(&mut self, a: &Var, s: f64) -> Var {
        let out = a.value().map(|v| v * s);
        self.push(out, || Op::Scale(a.node, s))
    }

    /// `sum_i c_i * x_i` over same-shaped terms.
    pub fn lincomb(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| shape_err("lincomb", "no terms"))?
            .1;
        let mut data = vec![0.0; first.value().numel()];
        for (c, v) in terms {
            same_shape("lincomb", first, v)?;
            if *c == 0.0 {
                continue;
            }
            for (o, x) in data.iter_mut().zip(v.data()) {
                *o += c * x;
            }
        }
        let out = Tensor::new(first.shape().to_vec(), data)?;
        Ok(self.push(out, || {
            Op::LinComb(terms.iter().map(|(c, v)| (v.node, *c)).collect())
        }))
    }

    /// Matrix product of `a` (viewed as rows x cols) with a 2-D `b`.
    pub fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (r, k) = (a.value().rows(), a.value().cols());
        if b.shape().len() != 2 || b.shape()[0] != k {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let m = b.shape()[1];
        let mut data = vec![0.0; r * m];
        matmul_acc(a.data(), b.data(), &mut data, r, k, m);
        let out = Tensor::new(vec![r, m], data)?;
        Ok(self.push(out, || Op::MatMul {
            a: a.node,
            b: b.node,
            av: a.value.clone(),
            bv: b.value.clone(),
            dims: (r, k, m),
        }))
    }

    /// Adds a `[cols]` bias to every row of `a`.
    pub fn add_bias(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let cols = a.value().cols();
        if bias.value().numel() != cols {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", a.shape(), bias.shape()),
            ));
        }
        let mut data = a.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(out, || Op::AddBias {
            a: a.node,
            bias: bias.node,
            cols,
        }))
    }

    pub fn activation(&mut self, a: &Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a.clone();
        }
        let out = a.value().map(|x| act.apply(x));
        self.push(out, || Op::Unary {
            a: a.node,
            act,
            input: a.value.clone(),
        })
    }

    pub fn sum(&mut self, a: &Var) -> Var {
        let s = a.data().iter().sum();
        self.push(Tensor::scalar(s), || Op::Sum(a.node, a.shape().to_vec()))
    }

    pub fn mean(&mut self, a: &Var) -> Var {
        let n = a.value().numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(&s, 1.0 / n)
    }

    /// `out[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: &Var, index: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<Var> {
        let n = a.value().numel();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of {n}")));
        }
        let src = a.data();
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, || Op::Gather {
            a: a.node,
            index,
        }))
    }

    /// Selects whole rows of a 2-D view.
    pub fn select_rows(&mut self, a: &Var, rows: &[usize]) -> Result<Var> {
        let c = a.value().cols();
        let index: Vec<usize> = rows.iter().flat_map(|&r| r * c..(r + 1) * c).collect();
        self.gather(a, Rc::new(index), vec![rows.len(), c])
    }

    pub fn reshape(&mut self, a: &Var, shape: Vec<usize>) -> Result<Var> {
        let out = a.value().clone().reshaped(shape)?;
        Ok(self.push(out, || Op::Reshape(a.node)))
    }

    /// Concatenates 2-D views along the column axis.
    pub fn concat_cols(&mut self, parts: &[&Var]) -> Result<Var> {
        let rows = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols", "no parts"))?
            .value()
            .rows();
        if parts.iter().any(|p| p.value().rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| p.value().cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.value().row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, || Op::ConcatCols {
            parts: parts.iter().map(|p| (p.node, p.value().cols())).collect(),
            rows,
        }))
    }

    /// Stacks 2-D views along the row axis.
    pub fn concat_rows(&mut self, parts: &[&Var]) -> Result<Var> {
        let cols = parts
            .first()
            .ok_or_else(|| shape_err("concat_rows", "no parts"))?
            .value()
            .cols();
        if parts.iter().any(|p| p.value().cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            data.extend_from_slice(p.data());
            rows += p.value().rows();
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, || {
            Op::ConcatRows(parts.iter().map(|p| (p.node, p.shape().to_vec())).collect())
        }))
    }

    /// Per-row matrix-vector product. Each row of `g` (`[n, r*c]`) is a
    /// row-major `r x c` matrix applied to the matching row of `v` (`[n, c]`).
    pub fn row_matvec(&mut self, g: &Var, v: &Var) -> Result<Var> {
        let n = v.value().rows();
        let c = v.value().cols();
        let gc = g.value().cols();
        if g.value().rows() != n || c == 0 || !gc.is_multiple_of(c) {
            return Err(shape_err(
                "row_matvec",
                format!("{:?} . {:?}", g.shape(), v.shape()),
            ));
        }
        let r = gc / c;
        let mut data = vec![0.0; n * r];
        for b in 0..n {
            let grow = g.value().row(b);
            let vrow = v.value().row(b);
            for i in 0..r {
                data[b * r + i] = grow[i * c..(i + 1) * c]
                    .iter()
                    .zip(vrow)
                    .map(|(x, y)| x * y)
                    .sum();
            }
        }
        let out = Tensor::new(vec![n, r], data)?;
        Ok(self.push(out, || Op::RowMatVec {
            g: g.node,
            v: v.node,
            gv: g.value.clone(),
            vv: v.value.clone(),
            out_cols: r,
            in_cols: c,
        }))
    }

    /// Training-mode batch normalization over rows. Returns the normalized
    /// output together with the batch mean and biased variance per column.
    pub fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, c) = (x.value().rows(), x.value().cols());
        if gamma.value().numel() != c || beta.value().numel() != c || n == 0 {
            return Err(shape_err("batch_norm", format!("{:?}", x.shape())));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.value().row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for r in 0..n {
            for (j, v) in x.value().row(r).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * c];
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            for j in 0..c {
                let h = (x.value().get(r, j) - mean[j]) * inv_std[j];
                xhat[r * c + j] = h;
                out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
            }
        }
        let xhat = Tensor::new(x.shape().to_vec(), xhat)?;
        let outt = Tensor::new(x.shape().to_vec(), out)?;
        let var_out = self.push(outt, || Op::BatchNorm {
            x: x.node,
            gamma: gamma.node,
            beta: beta.node,
            xhat,
            inv_std,
            gamma_v: gamma.value.clone(),
        });
        Ok((var_out, mean, var))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: &Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if loss.value().numel() != 1 {
            return Err(Error::NotScalar(loss.shape().to_vec()));
        }
        let root = loss.node.ok_or(Error::NotRecorded)?;
        self.consumed = true;
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root] = Some(Tensor::full(&nodes[root].shape, 1.0));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *b, g.data(), 1.0);
                    accumulate_owned(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &nodes, *b, g.data(), -1.0);
                    accumulate_owned(&mut grads, *a, g);
                }
                Op::Mul { a, b, av, bv } => {
                    if a.is_some() {
                        let d: Vec<f64> = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, &nodes, *a, &d, 1.0);
                    }
                    if b.is_some() {
                        let d: Vec<f64> = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, &nodes, *b, &d, 1.0);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, &nodes, *a, g.data(), *s),
                Op::LinComb(terms) => {
                    for (p, c) in terms {
                        if *c != 0.0 {
                            accumulate(&mut grads, &nodes, *p, g.data(), *c);
                        }
                    }
                }
                Op::MatMul {
                    a,
                    b,
                    av,
                    bv,
                    dims: (r, k, m),
                } => {
                    if let Some(ai) = a {
                        let slot = slot(&mut grads, &nodes, *ai);
                        matmul_a_bt_acc(g.data(), bv.data(), slot, *r, *k, *m);
                    }
                    if let Some(bi) = b {
                        let slot = slot(&mut grads, &nodes, *bi);
                        matmul_at_b_acc(av.data(), g.data(), slot, *r, *k, *m);
                    }
                }
                Op::AddBias { a, bias, cols } => {
                    if bias.is_some() {
                        let mut d = vec![0.0; *cols];
                        for row in g.data().chunks(*cols) {
                            for (o, v) in d.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, &nodes, *bias, &d, 1.0);
                    }
                    accumulate_owned(&mut grads, *a, g);
                }
                Op::Unary { a, act, input } => {
                    if a.is_some() {
                        let d: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(input.data())
                            .map(|(gv, &x)| gv * act.derivative(x))
                            .collect();
                        accumulate(&mut grads, &nodes, *a, &d, 1.0);
                    }
                }
                Op::Sum(a, shape) => {
                    if a.is_some() {
                        let n: usize = shape.iter().product();
                        let d = vec![g.data()[0]; n];
                        accumulate(&mut grads, &nodes, *a, &d, 1.0);
                    }
                }
                Op::Gather { a, index, .. } => {
                    if let Some(ai) = a {
                        let slot = slot(&mut grads, &nodes, *ai);
                        for (&i, gv) in index.iter().zip(g.data()) {
                            slot[i] += gv;
                        }
                    }
                }
                Op::Reshape(a) => accumulate(&mut grads, &nodes, *a, g.data(), 1.0),
                Op::ConcatCols { parts, rows } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for (p, cols) in parts {
                        if let Some(pi) = p {
                            let slot = slot(&mut grads, &nodes, *pi);
                            for r in 0..*rows {
                                let src = &g.data()[r * total + offset..r * total + offset + cols];
                                for (o, v) in slot[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                    *o += v;
                                }
                            }
                        }
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for (p, shape) in parts {
                        let n: usize = shape.iter().product();
                        accumulate(&mut grads, &nodes, *p, &g.data()[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::RowMatVec {
                    g: gp,
                    v,
                    gv,
                    vv,
                    out_cols,
                    in_cols,
                } => {
                    let (r, c) = (*out_cols, *in_cols);
                    let n = vv.rows();
                    if let Some(gi) = gp {
                        let slot = slot(&mut grads, &nodes, *gi);
                        for b in 0..n {
                            let vrow = vv.row(b);
                            for i in 0..r {
                                let go = g.data()[b * r + i];
                                if go == 0.0 {
                                    continue;
                                }
                                let dst = &mut slot[b * r * c + i * c..b * r * c + (i + 1) * c];
                                for (o, x) in dst.iter_mut().zip(vrow) {
                                    *o += go * x;
                                }
                            }
                        }
                    }
                    if let Some(vi) = v {
                        let slot = slot(&mut grads, &nodes, *vi);
                        for b in 0..n {
                            let grow = gv.row(b);
                            for i in 0..r {
                                let go = g.data()[b * r + i];
                                if go == 0.0 {
                                    continue;
                                }
                                let src = &grow[i * c..(i + 1) * c];
                                for (o, x) in slot[b * c..(b + 1) * c].iter_mut().zip(src) {
                                    *o += go * x;
                                }
                            }
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    gamma_v,
                } => {
                    let (n, c) = (xhat.rows(), xhat.cols());
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            let gv = g.data()[r * c + j];
                            dgamma[j] += gv * xhat.get(r, j);
                            dbeta[j] += gv;
                        }
                    }
                    if x.is_some() {
                        let nf = n as f64;
                        let mut dx = vec![0.0; n * c];
                        for j in 0..c {
                            // dxhat = g * gamma; column sums reuse dbeta/dgamma.
                            let s1 = dbeta[j] * gamma_v.data()[j];
                            let s2 = dgamma[j] * gamma_v.data()[j];
                            for r in 0..n {
                                let dxh = g.data()[r * c + j] * gamma_v.data()[j];
                                dx[r * c + j] =
                                    inv_std[j] / nf * (nf * dxh - s1 - xhat.get(r, j) * s2);
                            }
                        }
                        accumulate(&mut grads, &nodes, *x, &dx, 1.0);
                    }
                    accumulate(&mut grads, &nodes, *gamma, &dgamma, 1.0);
                    accumulate(&mut grads, &nodes, *beta, &dbeta, 1.0);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], id: usize) -> &'a mut [f64] {
    grads[id]
        .get_or_insert_with(|| Tensor::zeros(&nodes[id].shape))
        .data_mut()
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], p: Parent, d: &[f64], s: f64) {
    let Some(id) = p else { return };
    let dst = slot(grads, nodes, id);
    if s == 1.0 {
        for (o, v) in dst.iter_mut().zip(d) {
            *o += v;
        }
    } else {
        for (o, v) in dst.iter_mut().zip(d) {
            *o += s * v;
        }
    }
}

fn accumulate_owned(grads: &mut [Option<Tensor>], p: Parent, g: Tensor) {
    let Some(id) = p else { return };
    match &mut grads[id] {
        Some(existing) => {
            for (o, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *o += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
