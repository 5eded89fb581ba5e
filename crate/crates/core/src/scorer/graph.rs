//! Reverse-mode differentiation over a per-word computation tape.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. Parameter leaves borrow the parameter
//! tensors instead of copying them; their gradients land in a dense
//! per-parameter buffer.

use super::tensor::{matmul, matmul_nt_acc, matmul_tn_acc, Tensor};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

enum Op {
    Param(usize),
    Const,
    Embed {
        table: NodeId,
        ids: Vec<u32>,
    },
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<f64>,
    },
    LogSoftmax(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match self.nodes[id].op {
            Op::Param(p) => &self.params[p],
            _ => &self.nodes[id].value,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.push(Tensor::default(), Op::Param(index))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Gathers rows of `table`.
    pub fn embed(&mut self, table: NodeId, ids: Vec<u32>) -> NodeId {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(out, Op::Embed { table, ids })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        for r in 0..out.rows {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for x in &mut out.data {
            *x = x.max(0.0);
        }
        self.push(out, Op::Relu(a))
    }

    /// Multiplies by a fixed mask (already scaled by `1 / (1 - p)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> NodeId {
        let mut out = self.value(x).clone();
        for (o, m) in out.data.iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; xv.rows];
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..xv.cols {
                let h = (row[c] - mean) * is;
                xhat[r * xv.cols + c] = h;
                out.data[r * xv.cols + c] = h * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention of `q` (Tq × d) over `k`, `v` (Tk × d).
    /// With `causal`, query `i` attends to keys `0..=i` only.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, causal: bool) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, tk, d) = (qv.rows, kv.rows, qv.cols);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = Tensor::zeros(tq, d);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..tq {
                let limit = if causal { (i + 1).min(tk) } else { tk };
                let p = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let qi = &qv.row(i)[cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for j in 0..limit {
                    let s: f64 = qi.iter().zip(&kv.row(j)[cols.clone()]).map(|(a, b)| a * b).sum();
                    p[j] = s * scale;
                    max = max.max(p[j]);
                }
                let mut z = 0.0;
                for pj in &mut p[..limit] {
                    *pj = (*pj - max).exp();
                    z += *pj;
                }
                let orow = &mut out.data[i * d..(i + 1) * d];
                for j in 0..limit {
                    p[j] /= z;
                    let vj = &vv.row(j)[cols.clone()];
                    for (o, &x) in orow[cols.clone()].iter_mut().zip(vj) {
                        *o += p[j] * x;
                    }
                }
            }
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
        )
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Back-propagates `seed` (the gradient of the objective w.r.t. `output`)
    /// and accumulates parameter gradients into `param_grads`.
    pub fn backward(&self, output: NodeId, seed: Tensor, param_grads: &mut [Tensor]) {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(seed);

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param(p) => param_grads[*p].add_assign(&g),
                Op::Const => {}
                Op::Embed { table, ids } => {
                    let cols = g.cols;
                    let target = self.grad_target(*table, &mut grads, param_grads);
                    for (r, &row) in ids.iter().enumerate() {
                        let dst = &mut target.data[row as usize * cols..(row as usize + 1) * cols];
                        for (d, &x) in dst.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.grad_target(*a, &mut grads, param_grads).add_assign(&g);
                    self.grad_target(*b, &mut grads, param_grads).add_assign(&g);
                }
                Op::AddRow(a, bias) => {
                    let target = self.grad_target(*bias, &mut grads, param_grads);
                    for r in 0..g.rows {
                        for (d, &x) in target.data.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    self.grad_target(*a, &mut grads, param_grads).add_assign(&g);
                }
                Op::Scale(a, s) => {
                    let target = self.grad_target(*a, &mut grads, param_grads);
                    for (d, &x) in target.data.iter_mut().zip(&g.data) {
                        *d += s * x;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    matmul_nt_acc(&g, bv, self.grad_target(*a, &mut grads, param_grads));
                    matmul_tn_acc(av, &g, self.grad_target(*b, &mut grads, param_grads));
                }
                Op::Relu(a) => {
                    let out = &self.nodes[id].value;
                    let target = self.grad_target(*a, &mut grads, param_grads);
                    for ((d, &x), &o) in target.data.iter_mut().zip(&g.data).zip(&out.data) {
                        if o > 0.0 {
                            *d += x;
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let target = self.grad_target(*x, &mut grads, param_grads);
                    for ((d, &gx), &m) in target.data.iter_mut().zip(&g.data).zip(mask) {
                        *d += gx * m;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => self.layer_norm_backward(&g, *x, *gamma, *beta, xhat, inv_std, &mut grads, param_grads),
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => self.attention_backward(&g, *q, *k, *v, *heads, probs, &mut grads, param_grads),
                Op::LogSoftmax(a) => {
                    let out = &self.nodes[id].value;
                    let target = self.grad_target(*a, &mut grads, param_grads);
                    for r in 0..g.rows {
                        let gs: f64 = g.row(r).iter().sum();
                        let grow = g.row(r);
                        let orow = out.row(r);
                        let trow = &mut target.data[r * g.cols..(r + 1) * g.cols];
                        for c in 0..g.cols {
                            trow[c] += grow[c] - orow[c].exp() * gs;
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer of node `id`: the parameter gradient for parameter
    /// leaves, otherwise a lazily zeroed node gradient.
    fn grad_target<'g>(
        &self,
        id: NodeId,
        grads: &'g mut [Option<Tensor>],
        param_grads: &'g mut [Tensor],
    ) -> &'g mut Tensor {
        match self.nodes[id].op {
            Op::Param(p) => &mut param_grads[p],
            _ => grads[id].get_or_insert_with(|| {
                let v = self.value(id);
                Tensor::zeros(v.rows, v.cols)
            }),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_norm_backward(
        &self,
        g: &Tensor,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: &[f64],
        inv_std: &[f64],
        grads: &mut [Option<Tensor>],
        param_grads: &mut [Tensor],
    ) {
        let cols = g.cols;
        let n = cols as f64;
        let gv = self.value(gamma).data.clone();
        {
            let dg = self.grad_target(gamma, grads, param_grads);
            for r in 0..g.rows {
                for c in 0..cols {
                    dg.data[c] += g.at(r, c) * xhat[r * cols + c];
                }
            }
        }
        {
            let db = self.grad_target(beta, grads, param_grads);
            for r in 0..g.rows {
                for (d, &x) in db.data.iter_mut().zip(g.row(r)) {
                    *d += x;
                }
            }
        }
        let dx = self.grad_target(x, grads, param_grads);
        let mut dxhat = vec![0.0; cols];
        for r in 0..g.rows {
            let xh = &xhat[r * cols..(r + 1) * cols];
            for c in 0..cols {
                dxhat[c] = g.at(r, c) * gv[c];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            let row = &mut dx.data[r * cols..(r + 1) * cols];
            for c in 0..cols {
                row[c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Tensor,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
        param_grads: &mut [Tensor],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (tq, tk, d) = (qv.rows, kv.rows, qv.cols);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(tq, d);
        let mut dk = Tensor::zeros(tk, d);
        let mut dv = Tensor::zeros(tk, d);
        let mut dp = vec![0.0; tk];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..tq {
                let p = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let gi = &g.row(i)[cols.clone()];
                let mut dot = 0.0;
                for j in 0..tk {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    dp[j] = gi.iter().zip(&vv.row(j)[cols.clone()]).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    let dvrow = &mut dv.data[j * d..(j + 1) * d];
                    for (o, &x) in dvrow[cols.clone()].iter_mut().zip(gi) {
                        *o += p[j] * x;
                    }
                }
                for j in 0..tk {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for c in cols.clone() {
                        dq.data[i * d + c] += ds * kv.at(j, c);
                        dk.data[j * d + c] += ds * qv.at(i, c);
                    }
                }
            }
        }
        self.grad_target(q, grads, param_grads).add_assign(&dq);
        self.grad_target(k, grads, param_grads).add_assign(&dk);
        self.grad_target(v, grads, param_grads).add_assign(&dv);
    }
}
