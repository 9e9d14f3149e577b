//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] walks the record in reverse, accumulating parameter
//! gradients into the [`ParamStore`] the parameters were read from and
//! returning the gradients of every other node.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_nt_acc, matmul_tn_acc};
use crate::numerics::{ParamStore, Tensor2};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    AddScaled(usize, usize, f64),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    MeanOf(Vec<usize>),
    MeanRows(usize),
    GatherMean {
        table: usize,
        index: Vec<Vec<usize>>,
    },
    SoftmaxCe {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor2,
    },
    SegmentedCe {
        logits: usize,
        segments: Vec<(usize, usize)>,
        targets: Vec<Vec<usize>>,
        probs: Tensor2,
    },
    Mse {
        pred: usize,
        target: Tensor2,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Gradients of the loss with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor2> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a read of parameter slot `name`; backward accumulates into it.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.slot_id(name)?;
        Ok(self.push(store.value_at(id).clone(), Op::Param(id)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        Ok(self.push(value, Op::MatMul(ia, ib)))
    }

    /// `x + b` with `b` a `1 x cols` row broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(b)?);
        let value = self.nodes[ix].value.add_row(&self.nodes[ib].value)?;
        Ok(self.push(value, Op::AddBias(ix, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_scaled(a, b, 1.0)
    }

    /// `a + scale·b`, elementwise.
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        }
        let mut value = va.clone();
        for (o, y) in value.data_mut().iter_mut().zip(vb.data()) {
            *o += scale * y;
        }
        Ok(self.push(value, Op::AddScaled(ia, ib, scale)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(i)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.map(f64::tanh);
        Ok(self.push(value, Op::Tanh(i)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.map(sigmoid);
        Ok(self.push(value, Op::Sigmoid(i)))
    }

    /// Elementwise mean of same-shaped tensors.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let ids = xs.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or(Error::ShapeMismatch {
            op: "mean_of",
            left: (0, 0),
            right: (0, 0),
        })?;
        let mut value = self.nodes[*first].value.clone();
        for &i in &ids[1..] {
            let v = &self.nodes[i].value;
            if v.shape() != value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "mean_of",
                    left: value.shape(),
                    right: v.shape(),
                });
            }
            value.add_assign(v);
        }
        value.scale_assign(1.0 / ids.len() as f64);
        Ok(self.push(value, Op::MeanOf(ids)))
    }

    /// Column means, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let v = &self.nodes[i].value;
        let mut value = Tensor2::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, x) in value.data_mut().iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        value.scale_assign(1.0 / v.rows().max(1) as f64);
        Ok(self.push(value, Op::MeanRows(i)))
    }

    /// Row `b` of the output is the mean of `table` rows `index[b]`.
    pub fn gather_mean(&mut self, table: Var, index: Vec<Vec<usize>>) -> Result<Var> {
        let it = self.idx(table)?;
        let t = &self.nodes[it].value;
        let mut value = Tensor2::zeros(index.len(), t.cols());
        for (b, rows) in index.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let w = 1.0 / rows.len() as f64;
            for &r in rows {
                if r >= t.rows() {
                    return Err(Error::ShapeMismatch {
                        op: "gather_mean",
                        left: t.shape(),
                        right: (r, 0),
                    });
                }
                for (c, x) in t.row(r).iter().enumerate() {
                    value.set(b, c, value.get(b, c) + w * x);
                }
            }
        }
        Ok(self.push(value, Op::GatherMean { table: it, index }))
    }

    /// Mean over rows of softmax cross-entropy against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let l = &self.nodes[il].value;
        if l.rows() != labels.len() || labels.iter().any(|&y| y >= l.cols()) {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: l.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut probs = Tensor2::zeros(l.rows(), l.cols());
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            loss += softmax_segment(l.row(r), &mut probs.data_mut()[r * l.cols()..(r + 1) * l.cols()], y);
        }
        let n = labels.len().max(1) as f64;
        Ok(self.push(
            Tensor2::scalar(loss / n),
            Op::SoftmaxCe {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Cross-entropy summed over column segments `(start, len)`, each with
    /// its own categorical target, averaged over rows.
    pub fn segmented_cross_entropy(
        &mut self,
        logits: Var,
        segments: &[(usize, usize)],
        targets: &[Vec<usize>],
    ) -> Result<Var> {
        let il = self.idx(logits)?;
        let l = &self.nodes[il].value;
        let cols = l.cols();
        let fits = segments.iter().all(|&(s, n)| n > 0 && s + n <= cols);
        let well_formed = l.rows() == targets.len()
            && targets.iter().all(|t| {
                t.len() == segments.len() && t.iter().zip(segments).all(|(&y, &(_, n))| y < n)
            });
        if !fits || !well_formed {
            return Err(Error::ShapeMismatch {
                op: "segmented_cross_entropy",
                left: l.shape(),
                right: (targets.len(), segments.len()),
            });
        }
        let mut probs = Tensor2::zeros(l.rows(), cols);
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = l.row(r);
            let prow = &mut probs.data_mut()[r * cols..(r + 1) * cols];
            for (&(s, n), &y) in segments.iter().zip(t) {
                loss += softmax_segment(&row[s..s + n], &mut prow[s..s + n], y);
            }
        }
        let n = targets.len().max(1) as f64;
        Ok(self.push(
            Tensor2::scalar(loss / n),
            Op::SegmentedCe {
                logits: il,
                segments: segments.to_vec(),
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean over all entries of `(pred - target)²`.
    pub fn mse(&mut self, pred: Var, target: &Tensor2) -> Result<Var> {
        let ip = self.idx(pred)?;
        let p = &self.nodes[ip].value;
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse",
                left: p.shape(),
                right: target.shape(),
            });
        }
        let n = p.data().len().max(1) as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor2::scalar(loss),
            Op::Mse {
                pred: ip,
                target: target.clone(),
            },
        ))
    }

    /// Backpropagates from the scalar `loss`. Parameter gradients are added to
    /// `store`; gradients of all nodes are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let li = self.idx(loss)?;
        let shape = self.nodes[li].value.shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor2::scalar(1.0));

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Param(slot) => store.accumulate_grad(*slot, &g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut ga = Tensor2::zeros(va.rows(), va.cols());
                    matmul_nt_acc(&g, vb, &mut ga);
                    let mut gb = Tensor2::zeros(vb.rows(), vb.cols());
                    matmul_tn_acc(va, &g, &mut gb);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::AddScaled(a, b, s) => {
                    let mut gb = g.clone();
                    gb.scale_assign(*s);
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (o, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    for (o, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *o *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (o, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *o *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanOf(ids) => {
                    let w = 1.0 / ids.len() as f64;
                    for &j in ids {
                        let mut gj = g.clone();
                        gj.scale_assign(w);
                        accumulate(&mut grads, j, gj);
                    }
                }
                Op::MeanRows(x) => {
                    let vx = &self.nodes[*x].value;
                    let w = 1.0 / vx.rows().max(1) as f64;
                    let mut gx = Tensor2::zeros(vx.rows(), vx.cols());
                    for r in 0..vx.rows() {
                        for c in 0..vx.cols() {
                            gx.set(r, c, g.get(0, c) * w);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherMean { table, index } => {
                    let vt = &self.nodes[*table].value;
                    let mut gt = Tensor2::zeros(vt.rows(), vt.cols());
                    for (b, rows) in index.iter().enumerate() {
                        if rows.is_empty() {
                            continue;
                        }
                        let w = 1.0 / rows.len() as f64;
                        for &r in rows {
                            for c in 0..vt.cols() {
                                gt.set(r, c, gt.get(r, c) + w * g.get(b, c));
                            }
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.get(0, 0) / labels.len().max(1) as f64;
                    let mut gl = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        gl.set(r, y, gl.get(r, y) - 1.0);
                    }
                    gl.scale_assign(scale);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::SegmentedCe {
                    logits,
                    segments,
                    targets,
                    probs,
                } => {
                    let scale = g.get(0, 0) / targets.len().max(1) as f64;
                    let mut gl = probs.clone();
                    for (r, t) in targets.iter().enumerate() {
                        for (&(s, _), &y) in segments.iter().zip(t) {
                            gl.set(r, s + y, gl.get(r, s + y) - 1.0);
                        }
                    }
                    gl.scale_assign(scale);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Mse { pred, target } => {
                    let vp = &self.nodes[*pred].value;
                    let s = 2.0 * g.get(0, 0) / vp.data().len().max(1) as f64;
                    let mut gp = vp.clone();
                    for (o, t) in gp.data_mut().iter_mut().zip(target.data()) {
                        *o = s * (*o - t);
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        // Only leaf gradients survive; intermediates were consumed above.
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], i: usize, g: Tensor2) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Writes softmax of `logits` into `probs`, returns `-ln probs[target]`.
fn softmax_segment(logits: &[f64], probs: &mut [f64], target: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - m).exp();
        z += *p;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    -(logits[target] - m - z.ln())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
