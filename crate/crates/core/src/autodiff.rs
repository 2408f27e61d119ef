//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! The tape is rebuilt on every forward pass (define-by-run), holds the
//! forward value of every node, and replays itself in reverse to accumulate
//! gradients. Single-threaded per tape; accumulation order is fixed by node
//! id, so two backward passes over the same tape are bitwise identical.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    LogSumExp,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul,
    /// inputs: [w, x, b]; y = W x + b for rank-1 x
    Affine,
    Add,
    Mul,
    Neg,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Softplus,
    Scale(f64),
    AddConst,
    /// inputs: [x, s] with s scalar; y_i = x_i * s
    ScaleByScalar,
    Reduce {
        kind: ReduceKind,
        axis: Option<usize>,
    },
    Gather {
        indices: Vec<usize>,
    },
    Concat,
    Reshape,
    /// mask holds the per-element multiplier: 0.0 or 1/(1-rate)
    Dropout {
        mask: Vec<f64>,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Gradients keyed by node id; an absent entry means zero.
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    fn add_assign(&mut self, id: NodeId, shape: &[usize], contribution: &[f64]) {
        let slot = &mut self.grads[id];
        match slot {
            Some(t) => {
                for (g, c) in t.values_mut().iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => {
                *slot = Some(
                    Tensor::new(shape.to_vec(), contribution.to_vec())
                        .expect("gradient shape matches forward shape"),
                );
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].value.scalar_value()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, inputs, value });
        id
    }

    // ── leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn vector(&mut self, values: Vec<f64>) -> NodeId {
        self.leaf(Tensor::vector(values))
    }

    // ── matmul ───────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        let out = Tensor::new(vec![m, n], values)?;
        Ok(self.push(Op::MatMul, vec![a, b], out))
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("add", a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), values)?;
        Ok(self.push(Op::Add, vec![a, b], out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_shapes("mul", a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), values)?;
        Ok(self.push(Op::Mul, vec![a, b], out))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| -v);
        self.push(Op::Neg, vec![x], out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu, vec![x], out)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid, vec![x], out)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::exp);
        self.push(Op::Exp, vec![x], out)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(x).values().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                value: bad,
            });
        }
        let out = self.value(x).map(f64::ln);
        Ok(self.push(Op::Log, vec![x], out))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(softplus);
        self.push(Op::Softplus, vec![x], out)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| c * v);
        self.push(Op::Scale(c), vec![x], out)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).map(|v| v + c);
        self.push(Op::AddConst, vec![x], out)
    }

    /// y_i = x_i * s where s is a scalar node.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(Error::Contract(format!(
                "scale_by expects a scalar multiplier, got shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).scalar_value();
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(Op::ScaleByScalar, vec![x, s], out))
    }

    // ── reductions ───────────────────────────────────────────────────

    /// Reduces along `axis`, or over all elements when `axis` is `None`
    /// (producing a scalar of shape `[1]`).
    pub fn reduce(&mut self, kind: ReduceKind, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        if let Some(a) = axis {
            if a >= shape.len() {
                return Err(Error::Contract(format!(
                    "reduce axis {a} out of range for rank {}",
                    shape.len()
                )));
            }
        }
        let (outer, axis_len, inner, out_shape) = reduce_geometry(&shape, axis);
        if axis_len == 0 {
            return Err(Error::Contract("reduce over empty axis".into()));
        }
        let xv = self.value(x).values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| xv[o * axis_len * inner + j * inner + i];
                out[o * inner + i] = match kind {
                    ReduceKind::Sum => (0..axis_len).map(at).sum(),
                    ReduceKind::Mean => (0..axis_len).map(at).sum::<f64>() / axis_len as f64,
                    ReduceKind::LogSumExp => {
                        let m = (0..axis_len).map(at).fold(f64::NEG_INFINITY, f64::max);
                        let s: f64 = (0..axis_len).map(|j| (at(j) - m).exp()).sum();
                        m + s.ln()
                    }
                };
            }
        }
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(Op::Reduce { kind, axis }, vec![x], out))
    }

    pub fn sum(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, x, axis)
    }

    pub fn mean(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, x, axis)
    }

    pub fn logsumexp(&mut self, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        self.reduce(ReduceKind::LogSumExp, x, axis)
    }

    // ── structural ops ───────────────────────────────────────────────

    /// Copies rows of a `[V, d]` table; backward scatter-adds, so repeated
    /// indices accumulate.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let shape = self.value(table).shape();
        if shape.len() != 2 {
            return Err(Error::Contract(format!(
                "gather_rows expects a matrix, got shape {shape:?}"
            )));
        }
        let (v, d) = (shape[0], shape[1]);
        for &ix in indices {
            if ix >= v {
                return Err(Error::IndexOutOfRange {
                    index: ix,
                    bound: v,
                });
            }
        }
        let tv = self.value(table).values();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            out.extend_from_slice(&tv[ix * d..(ix + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], out)?;
        Ok(self.push(
            Op::Gather {
                indices: indices.to_vec(),
            },
            vec![table],
            out,
        ))
    }

    /// Concatenates rank-1 tensors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let mut values = Vec::new();
        for &p in parts {
            if self.value(p).rank() != 1 {
                return Err(Error::Contract(format!(
                    "concat expects rank-1 parts, got shape {:?}",
                    self.value(p).shape()
                )));
            }
            values.extend_from_slice(self.value(p).values());
        }
        let out = Tensor::vector(values);
        Ok(self.push(Op::Concat, parts.to_vec(), out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, self.value(x).values().to_vec())?;
        Ok(self.push(Op::Reshape, vec![x], out))
    }

    /// Inverted dropout: in train mode each unit is zeroed with probability
    /// `rate` and survivors are scaled by 1/(1-rate); eval mode is the
    /// identity (the input node is returned untouched).
    pub fn dropout(&mut self, x: NodeId, rate: f64, mode: Mode, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep_scale })
            .collect();
        let values: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), values)?;
        Ok(self.push(Op::Dropout { mask }, vec![x], out))
    }

    // ── composite helpers ────────────────────────────────────────────

    /// W[out,in] * x[in] + b[out] for rank-1 activations, fused into one
    /// node; this is the hot path of every MLP layer.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (ws, xs, bs) = (
            self.value(w).shape(),
            self.value(x).shape(),
            self.value(b).shape(),
        );
        if ws.len() != 2 || xs.len() != 1 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: ws.to_vec(),
                rhs: xs.to_vec(),
            });
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        let wv = self.value(w).values();
        let xv = self.value(x).values();
        let bv = self.value(b).values();
        let mut out = Vec::with_capacity(out_dim);
        for o in 0..out_dim {
            let row = &wv[o * in_dim..(o + 1) * in_dim];
            let mut s = bv[o];
            for (wi, xi) in row.iter().zip(xv) {
                s += wi * xi;
            }
            out.push(s);
        }
        Ok(self.push(Op::Affine, vec![w, x, b], Tensor::vector(out)))
    }

    /// Dot product of two rank-1 tensors, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let prod = self.mul(a, b)?;
        self.sum(prod, None)
    }

    /// x / max(||x||₂, eps^(1/2)-ish): stabilized L2 normalization.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let sq = self.mul(x, x)?;
        let n2 = self.sum(sq, None)?;
        let n2e = self.add_const(n2, 1e-12);
        let logn = self.log(n2e)?;
        let inv = self.scale(logn, -0.5);
        let inv = self.exp(inv);
        self.scale_by(x, inv)
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse topological sweep from a scalar root. Leaves' gradients are
    /// readable from the returned map; nodes the root does not depend on
    /// stay absent (zero).
    pub fn backward(&self, root: NodeId) -> Result<GradientMap> {
        let root_val = self.value(root);
        if !root_val.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut gm = GradientMap {
            grads: (0..self.nodes.len()).map(|_| None).collect(),
        };
        gm.grads[root] = Some(Tensor::new(
            root_val.shape().to_vec(),
            vec![1.0],
        )?);

        for id in (0..=root).rev() {
            let Some(dy) = gm.grads[id].clone() else {
                continue;
            };
            let node = &self.nodes[id];
            let dyv = dy.values();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    // dA = dC * B^T ; dB = A^T * dC
                    let da = matmul_a_bt(dyv, self.value(b).values(), m, n, k);
                    let db = matmul_at_b(self.value(a).values(), dyv, k, m, n);
                    gm.add_assign(a, &[m, k], &da);
                    gm.add_assign(b, &[k, n], &db);
                }
                Op::Affine => {
                    let (w, x, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                    let wshape = self.value(w).shape().to_vec();
                    let (out_dim, in_dim) = (wshape[0], wshape[1]);
                    let wv = self.value(w).values();
                    let xv = self.value(x).values();
                    // dW = dy ⊗ x ; dx = W^T dy ; db = dy
                    let mut dw = vec![0.0; out_dim * in_dim];
                    let mut dx = vec![0.0; in_dim];
                    for o in 0..out_dim {
                        let g = dyv[o];
                        if g == 0.0 {
                            continue;
                        }
                        let row = &wv[o * in_dim..(o + 1) * in_dim];
                        let drow = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            drow[i] = g * xv[i];
                            dx[i] += g * row[i];
                        }
                    }
                    gm.add_assign(w, &wshape, &dw);
                    gm.add_assign(x, &[in_dim], &dx);
                    gm.add_assign(b, &[out_dim], dyv);
                }
                Op::Add => {
                    let shape = dy.shape();
                    gm.add_assign(node.inputs[0], shape, dyv);
                    gm.add_assign(node.inputs[1], shape, dyv);
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let da: Vec<f64> = dyv
                        .iter()
                        .zip(self.value(b).values())
                        .map(|(g, v)| g * v)
                        .collect();
                    let db: Vec<f64> = dyv
                        .iter()
                        .zip(self.value(a).values())
                        .map(|(g, v)| g * v)
                        .collect();
                    gm.add_assign(a, dy.shape(), &da);
                    gm.add_assign(b, dy.shape(), &db);
                }
                Op::Neg => {
                    let dx: Vec<f64> = dyv.iter().map(|g| -g).collect();
                    gm.add_assign(node.inputs[0], dy.shape(), &dx);
                }
                Op::Relu => {
                    let x = node.inputs[0];
                    let dx: Vec<f64> = dyv
                        .iter()
                        .zip(self.value(x).values())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    gm.add_assign(x, dy.shape(), &dx);
                }
                Op::Sigmoid => {
                    let dx: Vec<f64> = dyv
                        .iter()
                        .zip(node.value.values())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    gm.add_assign(node.inputs[0], dy.shape(), &dx);
                }
                Op::Exp => {
                    let dx: Vec<f64> = dyv
                        .iter()
                        .zip(node.value.values())
                        .map(|(g, y)| g * y)
                        .collect();
                    gm.add_assign(node.inputs[0], dy.shape(), &dx);
                }
                Op::Log => {
                    let x = node.inputs[0];
                    let dx: Vec<f64> = dyv
                        .iter()
                        .zip(self.value(x).values())
                        .map(|(g, v)| g / v)
                        .collect();
                    gm.add_assign(x, dy.shape(), &dx);
                }
                Op::Softplus => {
                    let x = node.inputs[0];
                    let dx: Vec<f64> = dyv
                        .iter()
                        .zip(self.value(x).values())
                        .map(|(g, v)| g * sigmoid(*v))
                        .collect();
                    gm.add_assign(x, dy.shape(), &dx);
                }
                Op::Scale(c) => {
                    // zero-weight branches contribute exactly nothing
                    if *c != 0.0 {
                        let dx: Vec<f64> = dyv.iter().map(|g| g * c).collect();
                        gm.add_assign(node.inputs[0], dy.shape(), &dx);
                    }
                }
                Op::AddConst => {
                    gm.add_assign(node.inputs[0], dy.shape(), dyv);
                }
                Op::ScaleByScalar => {
                    let (x, s) = (node.inputs[0], node.inputs[1]);
                    let sv = self.value(s).scalar_value();
                    let dx: Vec<f64> = dyv.iter().map(|g| g * sv).collect();
                    let ds: f64 = dyv
                        .iter()
                        .zip(self.value(x).values())
                        .map(|(g, v)| g * v)
                        .sum();
                    gm.add_assign(x, dy.shape(), &dx);
                    gm.add_assign(s, &[1], &[ds]);
                }
                Op::Reduce { kind, axis } => {
                    let x = node.inputs[0];
                    let shape = self.value(x).shape().to_vec();
                    let (outer, axis_len, inner, _) = reduce_geometry(&shape, *axis);
                    let xv = self.value(x).values();
                    let yv = node.value.values();
                    let mut dx = vec![0.0; xv.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let g = dyv[o * inner + i];
                            for j in 0..axis_len {
                                let idx = o * axis_len * inner + j * inner + i;
                                dx[idx] = match kind {
                                    ReduceKind::Sum => g,
                                    ReduceKind::Mean => g / axis_len as f64,
                                    ReduceKind::LogSumExp => {
                                        g * (xv[idx] - yv[o * inner + i]).exp()
                                    }
                                };
                            }
                        }
                    }
                    gm.add_assign(x, &shape, &dx);
                }
                Op::Gather { indices } => {
                    let table = node.inputs[0];
                    let tshape = self.value(table).shape().to_vec();
                    let d = tshape[1];
                    let mut dt = vec![0.0; tshape[0] * d];
                    for (row, &ix) in indices.iter().enumerate() {
                        for c in 0..d {
                            dt[ix * d + c] += dyv[row * d + c];
                        }
                    }
                    gm.add_assign(table, &tshape, &dt);
                }
                Op::Concat => {
                    let mut offset = 0;
                    for &p in &node.inputs {
                        let len = self.value(p).numel();
                        gm.add_assign(p, self.value(p).shape(), &dyv[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Reshape => {
                    let x = node.inputs[0];
                    gm.add_assign(x, self.value(x).shape(), dyv);
                }
                Op::Dropout { mask } => {
                    let dx: Vec<f64> = dyv.iter().zip(mask).map(|(g, m)| g * m).collect();
                    gm.add_assign(node.inputs[0], dy.shape(), &dx);
                }
            }
        }
        Ok(gm)
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

/// softplus(x) = ln(1 + e^x), computed without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn reduce_geometry(shape: &[usize], axis: Option<usize>) -> (usize, usize, usize, Vec<usize>) {
    match axis {
        None => (1, shape.iter().product(), 1, vec![1]),
        Some(a) => {
            let outer: usize = shape[..a].iter().product();
            let inner: usize = shape[a + 1..].iter().product();
            let mut out_shape: Vec<usize> = shape.to_vec();
            out_shape.remove(a);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
            (outer, shape[a], inner, out_shape)
        }
    }
}
