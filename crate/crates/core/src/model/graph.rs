//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter as
//! leaves tagged with their index in a [`ParamSet`]; [`Graph::backward`]
//! returns one gradient per parameter.

use std::collections::HashMap;

use super::tensor::{matmul, Tensor};

pub type NodeId = usize;

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a `1×n` row to every row.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    LogSoftmax(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    /// Leading rows of a table, e.g. positions `0..len`.
    HeadRows(NodeId),
    SliceRows {
        a: NodeId,
        start: usize,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<Tensor>,
    },
    /// `Σ a ⊙ w` for a constant `w`.
    WeightedSum {
        a: NodeId,
        w: Tensor,
    },
    /// `Σ_t a[t, idx[t]]`
    PickSum {
        a: NodeId,
        idx: Vec<usize>,
    },
    /// Column of scalars.
    Stack(Vec<NodeId>),
    /// `Σ_{i<j} max(0, f_j − f_i + (j−i)·margin)` over a column `f`.
    PairwiseHinge {
        f: NodeId,
        margin: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
    param_of: HashMap<NodeId, usize>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const LN_EPS: f64 = 1e-5;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            param_of: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            needs_grad: false,
        });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&index) {
            return id;
        }
        self.nodes.push(Node {
            value: self.params.get(index).clone(),
            op: Op::Param,
            needs_grad: true,
        });
        let id = self.nodes.len() - 1;
        self.param_nodes.insert(index, id);
        self.param_of.insert(id, index);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), false, self.value(b), false);
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), false, self.value(b), true);
        self.push(v, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.rows(), 1);
        let mut v = self.value(a).clone();
        let cols = v.cols();
        assert_eq!(cols, r.cols());
        let rv = r.data().to_vec();
        for chunk in v.data_mut().chunks_mut(cols) {
            for (x, b) in chunk.iter_mut().zip(&rv) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// `x·w + b`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale(s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(&g).zip(&b) {
                *o = *o * gi + bi;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut v = av.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmax(a), &[a])
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            v.row_mut(r).copy_from_slice(t.row(id));
        }
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn head_rows(&mut self, table: NodeId, len: usize) -> NodeId {
        let v = self.value(table).slice_rows(0, len);
        self.push(v, Op::HeadRows(table), &[table])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice_rows(start, len);
        self.push(v, Op::SliceRows { a, start }, &[a])
    }

    /// Multi-head scaled dot-product attention over already projected
    /// `q` (Lq×d), `k` and `v` (Lk×d). With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (lq, d) = (qv.rows(), qv.cols());
        let lk = kv.rows();
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(lq, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = cols(qv, h * dh, dh);
            let kh = cols(kv, h * dh, dh);
            let vh = cols(vv, h * dh, dh);
            let mut s = matmul(&qh, false, &kh, true);
            for i in 0..lq {
                let row = s.row_mut(i);
                let visible = if causal { (i + 1).min(lk) } else { lk };
                let max = row[..visible]
                    .iter()
                    .map(|x| x * scale)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if j < visible {
                        *x = (*x * scale - max).exp();
                        z += *x;
                    } else {
                        *x = 0.0;
                    }
                }
                for x in row[..visible].iter_mut() {
                    *x /= z;
                }
            }
            let oh = matmul(&s, false, &vh, false);
            for i in 0..lq {
                out.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(oh.row(i));
            }
            probs.push(s);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    pub fn weighted_sum(&mut self, a: NodeId, w: Tensor) -> NodeId {
        assert_eq!(self.value(a).shape(), w.shape());
        let s = self.value(a).data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { a, w }, &[a])
    }

    pub fn pick_sum(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.rows(), idx.len());
        let s = idx.iter().enumerate().map(|(t, &c)| av.get(t, c)).sum();
        self.push(
            Tensor::scalar(s),
            Op::PickSum {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        )
    }

    pub fn stack(&mut self, scalars: &[NodeId]) -> NodeId {
        let data = scalars.iter().map(|&s| self.value(s).item()).collect();
        self.push(
            Tensor::from_vec(scalars.len(), 1, data),
            Op::Stack(scalars.to_vec()),
            scalars,
        )
    }

    pub fn pairwise_hinge(&mut self, f: NodeId, margin: f64) -> NodeId {
        let fv = self.value(f).data();
        let n = fv.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += (fv[j] - fv[i] + (j - i) as f64 * margin).max(0.0);
            }
        }
        self.push(Tensor::scalar(total), Op::PairwiseHinge { f, margin }, &[f])
    }

    /// Gradients of the scalar `loss` with respect to every parameter in the
    /// set. Parameters the loss does not touch get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Vec<Tensor> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let ga = matmul(&g, false, self.value(b), true);
                        self.acc(&mut grads, a, ga);
                    }
                    if self.nodes[b].needs_grad {
                        let gb = matmul(self.value(a), true, &g, false);
                        self.acc(&mut grads, b, gb);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a].needs_grad {
                        let ga = matmul(&g, false, self.value(b), false);
                        self.acc(&mut grads, a, ga);
                    }
                    if self.nodes[b].needs_grad {
                        let gb = matmul(&g, true, self.value(a), false);
                        self.acc(&mut grads, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.acc(&mut grads, a, g.clone());
                    self.acc(&mut grads, b, g);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    if self.nodes[row].needs_grad {
                        let mut gr = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        self.acc(&mut grads, row, gr);
                    }
                    self.acc(&mut grads, a, g);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.scale(*s);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &x) in ga.data_mut().iter_mut().zip(x.data()) {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let cols = xhat.cols();
                    let gv = self.value(*gain).data();
                    if self.nodes[*gain].needs_grad || self.nodes[*bias].needs_grad {
                        let mut gg = Tensor::zeros(1, cols);
                        let mut gb = Tensor::zeros(1, cols);
                        for r in 0..g.rows() {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                gb.data_mut()[c] += g.get(r, c);
                            }
                        }
                        self.acc(&mut grads, *gain, gg);
                        self.acc(&mut grads, *bias, gb);
                    }
                    if self.nodes[*x].needs_grad {
                        let mut gx = Tensor::zeros(g.rows(), cols);
                        let n = cols as f64;
                        for r in 0..g.rows() {
                            let dxhat: Vec<f64> = g.row(r).iter().zip(gv).map(|(a, b)| a * b).collect();
                            let sum: f64 = dxhat.iter().sum();
                            let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                            for ((o, d), xh) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                                *o = inv_std[r] / n * (n * d - sum - xh * dot);
                            }
                        }
                        self.acc(&mut grads, *x, gx);
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for r in 0..ga.rows() {
                        let s: f64 = ga.row(r).iter().sum();
                        for (gv, yv) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *gv -= yv.exp() * s;
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows(), t.cols());
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, x) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.acc(&mut grads, *table, gt);
                }
                Op::HeadRows(table) => {
                    let t = self.value(*table);
                    let mut gt = Tensor::zeros(t.rows(), t.cols());
                    gt.data_mut()[..g.len()].copy_from_slice(g.data());
                    self.acc(&mut grads, *table, gt);
                }
                Op::SliceRows { a, start } => {
                    let t = self.value(*a);
                    let mut gt = Tensor::zeros(t.rows(), t.cols());
                    let off = start * t.cols();
                    gt.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    self.acc(&mut grads, *a, gt);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.cols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Tensor::zeros(qv.rows(), d);
                    let mut gk = Tensor::zeros(kv.rows(), d);
                    let mut gvv = Tensor::zeros(vv.rows(), d);
                    for (h, p) in probs.iter().enumerate() {
                        let go = cols(&g, h * dh, dh);
                        let qh = cols(qv, h * dh, dh);
                        let kh = cols(kv, h * dh, dh);
                        let vh = cols(vv, h * dh, dh);
                        let gvh = matmul(p, true, &go, false);
                        let mut gp = matmul(&go, false, &vh, true);
                        for i in 0..gp.rows() {
                            let pr = p.row(i);
                            let dot: f64 = gp.row(i).iter().zip(pr).map(|(a, b)| a * b).sum();
                            for (x, pv) in gp.row_mut(i).iter_mut().zip(pr) {
                                *x = pv * (*x - dot) * scale;
                            }
                        }
                        let gqh = matmul(&gp, false, &kh, false);
                        let gkh = matmul(&gp, true, &qh, false);
                        put_cols(&mut gq, h * dh, &gqh);
                        put_cols(&mut gk, h * dh, &gkh);
                        put_cols(&mut gvv, h * dh, &gvh);
                    }
                    self.acc(&mut grads, *q, gq);
                    self.acc(&mut grads, *k, gk);
                    self.acc(&mut grads, *v, gvv);
                }
                Op::WeightedSum { a, w } => {
                    let mut ga = w.clone();
                    ga.scale(g.item());
                    self.acc(&mut grads, *a, ga);
                }
                Op::PickSum { a, idx } => {
                    let t = self.value(*a);
                    let mut ga = Tensor::zeros(t.rows(), t.cols());
                    let gs = g.item();
                    for (r, &c) in idx.iter().enumerate() {
                        ga.row_mut(r)[c] += gs;
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::Stack(items) => {
                    for (i, &s) in items.iter().enumerate() {
                        self.acc(&mut grads, s, Tensor::scalar(g.data()[i]));
                    }
                }
                Op::PairwiseHinge { f, margin } => {
                    let fv = self.value(*f).data();
                    let n = fv.len();
                    let gs = g.item();
                    let mut gf = Tensor::zeros(n, 1);
                    for i in 0..n {
                        for j in i + 1..n {
                            if fv[j] - fv[i] + (j - i) as f64 * margin > 0.0 {
                                gf.data_mut()[j] += gs;
                                gf.data_mut()[i] -= gs;
                            }
                        }
                    }
                    self.acc(&mut grads, *f, gf);
                }
            }
        }
        let mut out = self.params.zeros_like();
        for (&node, &pid) in &self.param_of {
            if let Some(g) = grads[node].take() {
                out[pid] = g;
            }
        }
        out
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), len);
    for r in 0..t.rows() {
        out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
    }
    out
}

fn put_cols(dst: &mut Tensor, start: usize, src: &Tensor) {
    for r in 0..src.rows() {
        let len = src.cols();
        dst.row_mut(r)[start..start + len].copy_from_slice(src.row(r));
    }
}
