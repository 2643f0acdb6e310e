//! Dynamic Wengert tape.
//!
//! Forward ops append a node holding their output value; `backward` walks the
//! node list in reverse, so every input id precedes its consumer by
//! construction and each node is visited at most once per call.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Floor applied to `log` inputs.
pub const LOG_FLOOR: f64 = 1e-12;
/// Ceiling applied to `exp` inputs.
pub const EXP_CEIL: f64 = 60.0;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for `sum` / `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// Everything, giving `1 x 1`.
    All,
    /// Collapse the row axis, giving `1 x cols`.
    Rows,
    /// Collapse the column axis, giving `rows x 1`.
    Cols,
}

/// How the right operand of an elementwise binary op is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `1 x cols`, repeated down the rows.
    Row,
    /// `rows x 1`, repeated across the columns.
    Col,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var, Reduce),
    Mean(Var, Reduce),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SoftmaxRows(Var),
    Transpose(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it when the loss does not reach it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(tape.value(v)),
        }
    }
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    let (ar, ac) = a.dims()?;
    let (br, bc) = b.dims()?;
    if (ar, ac) == (br, bc) {
        Ok(Broadcast::Same)
    } else if br == 1 && bc == ac {
        Ok(Broadcast::Row)
    } else if bc == 1 && br == ar {
        Ok(Broadcast::Col)
    } else {
        Err(Error::shape(op, format!("[{ar}, {ac}] with [{br}, {bc}]")))
    }
}

fn rhs_index(bc: Broadcast, i: usize, cols: usize) -> usize {
    match bc {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
    }
}

fn elementwise(a: &Tensor, b: &Tensor, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[rhs_index(bc, i, cols)]))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise preserves shape")
}

/// Sums a full-shape gradient down to the right operand's broadcast shape.
fn reduce_to(g: &Tensor, bc: Broadcast) -> Tensor {
    let (r, c) = (g.rows(), g.cols());
    match bc {
        Broadcast::Same => g.clone(),
        Broadcast::Row => {
            let mut out = Tensor::zeros(1, c);
            let od = out.data_mut();
            for row in 0..r {
                for (o, v) in od.iter_mut().zip(g.row_slice(row)) {
                    *o += v;
                }
            }
            out
        }
        Broadcast::Col => {
            let mut out = Tensor::zeros(r, 1);
            let od = out.data_mut();
            for (row, o) in od.iter_mut().enumerate() {
                *o = g.row_slice(row).iter().sum();
            }
            out
        }
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

fn reduce_forward(x: &Tensor, axis: Reduce, scale: f64) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    match axis {
        Reduce::All => Tensor::scalar(x.data().iter().sum::<f64>() * scale),
        Reduce::Rows => {
            let mut out = Tensor::zeros(1, c);
            let od = out.data_mut();
            for row in 0..r {
                for (o, v) in od.iter_mut().zip(x.row_slice(row)) {
                    *o += v;
                }
            }
            for o in od.iter_mut() {
                *o *= scale;
            }
            out
        }
        Reduce::Cols => {
            let data = (0..r)
                .map(|row| x.row_slice(row).iter().sum::<f64>() * scale)
                .collect();
            Tensor::from_rows(r, 1, data).expect("column reduction shape")
        }
    }
}

fn reduce_backward(g: &Tensor, input_shape: (usize, usize), axis: Reduce, scale: f64) -> Tensor {
    let (r, c) = input_shape;
    let gd = g.data();
    let mut out = Tensor::zeros(r, c);
    let od = out.data_mut();
    for row in 0..r {
        for col in 0..c {
            let gv = match axis {
                Reduce::All => gd[0],
                Reduce::Rows => gd[col],
                Reduce::Cols => gd[row],
            };
            od[row * c + col] = gv * scale;
        }
    }
    out
}

fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(x.row_slice(i));
    }
    Tensor::from_rows(idx.len(), c, data).expect("gather shape")
}

fn scatter_add_rows(x: &Tensor, idx: &[usize], out_rows: usize) -> Tensor {
    let c = x.cols();
    let mut out = Tensor::zeros(out_rows, c);
    let od = out.data_mut();
    for (src, &dst) in idx.iter().enumerate() {
        let dst_row = &mut od[dst * c..(dst + 1) * c];
        for (o, v) in dst_row.iter_mut().zip(x.row_slice(src)) {
            *o += v;
        }
    }
    out
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

    /// Drops every node recorded after the first `len`. Vars from the dropped
    /// suffix must not be used again; earlier Vars stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = broadcast_kind(name, self.value(a), self.value(b))?;
        let out = elementwise(self.value(a), self.value(b), bc, f);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, make(a, b, bc), rg))
    }

    /// `a + b`; `b` may be the same shape, a `1 x cols` row or a `rows x 1` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product, same broadcast rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `exp(min(x, 60))`.
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.min(EXP_CEIL).exp(), Op::Exp(x))
    }

    /// `ln(max(x, 1e-12))`.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(LOG_FLOOR).ln(), Op::Log(x))
    }

    /// Elementwise clamp into `[lo, hi]`; gradient is zero outside the open interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn sum(&mut self, x: Var, axis: Reduce) -> Var {
        let out = reduce_forward(self.value(x), axis, 1.0);
        let rg = self.requires_grad(x);
        self.push(out, Op::Sum(x, axis), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.sum(x, Reduce::All)
    }

    pub fn mean(&mut self, x: Var, axis: Reduce) -> Result<Var> {
        let count = self.reduce_count(x, axis);
        if count == 0 {
            return Err(Error::Contract("mean over an empty axis".into()));
        }
        let out = reduce_forward(self.value(x), axis, 1.0 / count as f64);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Mean(x, axis), rg))
    }

    fn reduce_count(&self, x: Var, axis: Reduce) -> usize {
        let t = self.value(x);
        match axis {
            Reduce::All => t.numel(),
            Reduce::Rows => t.rows(),
            Reduce::Cols => t.cols(),
        }
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(*first).dims()?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.dims()?;
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column count {c} differs from {cols}"),
                ));
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let out = Tensor::from_rows(rows, cols, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// `out[i] = x[idx[i]]`.
    pub fn gather_rows(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let idx = idx.into();
        let t = self.value(x);
        let (r, _) = t.dims()?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {r} rows"),
            ));
        }
        let out = gather_rows(t, &idx);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::GatherRows(x, idx), rg))
    }

    /// `out[idx[i]] += x[i]` into a zero matrix with `out_rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        idx: impl Into<Arc<[usize]>>,
        out_rows: usize,
    ) -> Result<Var> {
        let idx = idx.into();
        let t = self.value(x);
        let (r, _) = t.dims()?;
        if idx.len() != r {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("{} indices for {r} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::shape(
                "scatter_add_rows",
                format!("target row {bad} out of range for {out_rows} rows"),
            ));
        }
        let out = scatter_add_rows(t, &idx, out_rows);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::ScatterAddRows(x, idx), rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims()?;
        let mut data = Vec::with_capacity(r * c);
        for row in 0..r {
            let xs = t.row_slice(row);
            let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(xs.iter().map(|&v| (v - m).exp()));
            let z: f64 = data[start..].iter().sum();
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let out = Tensor::from_rows(r, c, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Columns `idx` of `x`, built from transpose and row gather.
    pub fn select_cols(&mut self, x: Var, idx: impl Into<Arc<[usize]>>) -> Result<Var> {
        let xt = self.transpose(x)?;
        let picked = self.gather_rows(xt, idx)?;
        self.transpose(picked)
    }

    /// Per-element branch state of every non-smooth op on the tape.
    ///
    /// Two evaluations of the same expression with equal signatures took the
    /// same branch at every relu / clamp / floored log / capped exp, so the
    /// function is smooth on the segment between them. A zero entry marks an
    /// input sitting exactly on a branch point.
    pub fn kink_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) => sig.extend(self.value(x).data().iter().map(|&v| sign(v, 0.0))),
                Op::Log(x) => sig.extend(self.value(x).data().iter().map(|&v| sign(v, LOG_FLOOR))),
                Op::Exp(x) => sig.extend(self.value(x).data().iter().map(|&v| sign(v, EXP_CEIL))),
                Op::Clamp { x, lo, hi } => sig.extend(
                    self.value(x)
                        .data()
                        .iter()
                        .map(|&v| 2 * sign(v, lo) + sign(v, hi)),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar of shape {:?}",
                lt.shape()
            )));
        }
        let mut pending: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut leaves: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        pending[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let Some(g) = pending[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut pending)?;
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, pending: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut pending[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, pending: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims()?;
                let n = bv.cols();
                if self.requires_grad(*a) {
                    // dA = G B^T
                    let mut ga = vec![0.0; m * k];
                    let gd = g.data();
                    let bd = bv.data();
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gd[i * n + j] * bd[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    self.accumulate(pending, *a, Tensor::from_rows(m, k, ga)?);
                }
                if self.requires_grad(*b) {
                    // dB = A^T G
                    let at = av.transpose()?;
                    let mut gb = vec![0.0; k * n];
                    matmul_into(at.data(), g.data(), &mut gb, k, m, n);
                    self.accumulate(pending, *b, Tensor::from_rows(k, n, gb)?);
                }
            }
            Op::Add(a, b, bc) => {
                self.accumulate(pending, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(pending, *b, reduce_to(g, *bc));
                }
            }
            Op::Sub(a, b, bc) => {
                self.accumulate(pending, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(pending, *b, reduce_to(g, *bc).map(|v| -v));
                }
            }
            Op::Mul(a, b, bc) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    self.accumulate(pending, *a, elementwise(g, bv, *bc, |x, y| x * y));
                }
                if self.requires_grad(*b) {
                    let full = elementwise(g, av, Broadcast::Same, |x, y| x * y);
                    self.accumulate(pending, *b, reduce_to(&full, *bc));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = elementwise(g, xv, Broadcast::Same, |gv, v| if v > 0.0 { gv } else { 0.0 });
                self.accumulate(pending, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = elementwise(g, out, Broadcast::Same, |gv, s| gv * s * (1.0 - s));
                self.accumulate(pending, *x, gx);
            }
            Op::Exp(x) => {
                let xv = self.value(*x);
                let mut gx = elementwise(g, out, Broadcast::Same, |gv, e| gv * e);
                for (gv, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if v > EXP_CEIL {
                        *gv = 0.0;
                    }
                }
                self.accumulate(pending, *x, gx);
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let gx = elementwise(g, xv, Broadcast::Same, |gv, v| {
                    if v >= LOG_FLOOR {
                        gv / v
                    } else {
                        0.0
                    }
                });
                self.accumulate(pending, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.value(*x);
                let gx = elementwise(g, xv, Broadcast::Same, |gv, v| {
                    if v > lo && v < hi {
                        gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(pending, *x, gx);
            }
            Op::Sum(x, axis) => {
                let dims = self.value(*x).dims()?;
                self.accumulate(pending, *x, reduce_backward(g, dims, *axis, 1.0));
            }
            Op::Mean(x, axis) => {
                let dims = self.value(*x).dims()?;
                let count = self.reduce_count(*x, *axis) as f64;
                self.accumulate(pending, *x, reduce_backward(g, dims, *axis, 1.0 / count));
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(pending, *x, g.map(|v| v * s));
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.requires_grad(p) {
                        let slice = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        self.accumulate(pending, p, Tensor::from_rows(r, cols, slice)?);
                    }
                    offset += r;
                }
            }
            Op::GatherRows(x, idx) => {
                let rows = self.value(*x).rows();
                self.accumulate(pending, *x, scatter_add_rows(g, idx, rows));
            }
            Op::ScatterAddRows(x, idx) => {
                self.accumulate(pending, *x, gather_rows(g, idx));
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = out.dims()?;
                let mut gx = Vec::with_capacity(r * c);
                for row in 0..r {
                    let s = out.row_slice(row);
                    let gr = g.row_slice(row);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(s.iter().zip(gr).map(|(sv, gv)| sv * (gv - dot)));
                }
                self.accumulate(pending, *x, Tensor::from_rows(r, c, gx)?);
            }
            Op::Transpose(x) => {
                self.accumulate(pending, *x, g.transpose()?);
            }
        }
        Ok(())
    }
}

fn sign(v: f64, at: f64) -> i8 {
    if v > at {
        1
    } else if v < at {
        -1
    } else {
        0
    }
}
