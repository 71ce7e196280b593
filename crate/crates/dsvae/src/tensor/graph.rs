//! Define-by-run tape with reverse-mode differentiation.
//!
//! Every primitive returns a new node; recording order is execution order, so
//! it is already topological and [`Graph::backward`] is a single reverse
//! sweep. A node's adjoint is propagated to an input only if that input
//! (transitively) requires gradients.

use super::{ParamRef, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Matrix (T x C) combined with a row vector (1 x C), broadcast over rows.
    BcastAdd(NodeId, NodeId),
    BcastSub(NodeId, NodeId),
    BcastMul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Powf(NodeId, f64),
    Exp(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Clamp(NodeId, f64, f64),
    MeanAxis0(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    ReverseRows(NodeId),
    /// x: (T x Cin), w: (K x Cin x Cout), b: (1 x Cout); stride 1, same padding.
    Conv1dSame(NodeId, NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Graph {
    nodes: Vec<Node>,
    n_params: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    /// Creates a graph whose first `store.len()` nodes are the parameters, in
    /// store order, all requiring gradients.
    pub fn with_params(store: &ParamStore) -> Self {
        let mut g = Graph::new();
        for e in store.entries() {
            g.push(e.tensor.clone(), Op::Leaf, true);
        }
        g.n_params = store.len();
        g
    }

    /// Like [`Graph::with_params`] but without gradient tracking, for
    /// inference-only forwards.
    pub fn with_params_frozen(store: &ParamStore) -> Self {
        let mut g = Graph::new();
        for e in store.entries() {
            g.push(e.tensor.clone(), Op::Leaf, false);
        }
        g.n_params = store.len();
        g
    }

    pub fn param(&self, r: ParamRef) -> NodeId {
        debug_assert!(r.0 < self.n_params);
        NodeId(r.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that never receives gradients (inputs, noise draws, constants).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn rank2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        let t = self.value(id);
        if t.rank() != 2 {
            return Err(Error::shape(op, format!("expected rank-2, got {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    // ---- primitives ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("[{m}x{k}] x [{k2}x{n}] inner dims differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
            false,
            false,
        );
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a, b), rg))
    }

    fn zip_same_shape(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(shape, data)?, make(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn bcast(
        &mut self,
        op: &'static str,
        m: NodeId,
        v: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let (rows, cols) = self.rank2(op, m)?;
        let (vr, vc) = self.rank2(op, v)?;
        if vr != 1 || vc != cols {
            return Err(Error::shape(
                op,
                format!("matrix [{rows}x{cols}] with row vector [{vr}x{vc}]"),
            ));
        }
        let mv = self.value(m).data();
        let vv = self.value(v).data();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(mv[r * cols + c], vv[c]));
            }
        }
        let rg = self.requires(m) || self.requires(v);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, make(m, v), rg))
    }

    /// `[T,C] + [1,C]` with the row vector broadcast over rows (bias add).
    pub fn bcast_add(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.bcast("bcast_add", m, v, |x, y| x + y, Op::BcastAdd)
    }

    pub fn bcast_sub(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.bcast("bcast_sub", m, v, |x, y| x - y, Op::BcastSub)
    }

    pub fn bcast_mul(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.bcast("bcast_mul", m, v, |x, y| x * y, Op::BcastMul)
    }

    fn map(
        &mut self,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.requires(x);
        self.push(Tensor { shape, data }, op, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn powf(&mut self, x: NodeId, c: f64) -> NodeId {
        self.map(x, |v| v.powf(c), Op::Powf(x, c))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    /// Clamps values to `[lo, hi]`; gradient passes only where unclamped.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// Column means: `[T,C] -> [1,C]`.
    pub fn mean_axis0(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.rank2("mean_axis0", x)?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += xv[r * cols + c];
            }
        }
        for v in &mut out {
            *v /= rows as f64;
        }
        let rg = self.requires(x);
        Ok(self.push(Tensor::new(vec![1, cols], out)?, Op::MeanAxis0(x), rg))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s / n), Op::MeanAll(x), rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Stacks rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs".to_string()));
        }
        let (_, cols) = self.rank2("concat_rows", parts[0])?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.rank2("concat_rows", p)?;
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {c} vs {cols}"),
                ));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Concatenates rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs".to_string()));
        }
        let (rows, _) = self.rank2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.rank2("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row mismatch: {r} vs {rows}"),
                ));
            }
            widths.push(c);
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.value(p).data();
                data.extend_from_slice(&pv[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.rank2("slice_rows", x)?;
        if start >= end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {start}..{end} of {rows} rows"),
            ));
        }
        let data = self.value(x).data()[start * cols..end * cols].to_vec();
        let rg = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![end - start, cols], data)?,
            Op::SliceRows(x, start, end),
            rg,
        ))
    }

    /// Single row `t` as a `[1,C]` tensor.
    pub fn row(&mut self, x: NodeId, t: usize) -> Result<NodeId> {
        self.slice_rows(x, t, t + 1)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.rank2("slice_cols", x)?;
        if start >= end || end > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} of {cols} cols"),
            ));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&xv[r * cols + start..r * cols + end]);
        }
        let rg = self.requires(x);
        Ok(self.push(
            Tensor::new(vec![rows, end - start], data)?,
            Op::SliceCols(x, start, end),
            rg,
        ))
    }

    /// Reverses row order (time reversal for the backward RNN direction).
    pub fn reverse_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.rank2("reverse_rows", x)?;
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows * cols);
        for r in (0..rows).rev() {
            data.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        let rg = self.requires(x);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ReverseRows(x), rg))
    }

    /// 1-D convolution along the row (time) axis with stride 1 and same
    /// padding. `x` is `[T,Cin]`, `w` is `[K,Cin,Cout]`, `b` is `[1,Cout]`.
    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (t_len, cin) = self.rank2("conv1d_same", x)?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != cin {
            return Err(Error::shape(
                "conv1d_same",
                format!("weight {:?} vs input [{t_len}x{cin}]", ws),
            ));
        }
        let (k, cout) = (ws[0], ws[2]);
        let (br, bc) = self.rank2("conv1d_same", b)?;
        if br != 1 || bc != cout {
            return Err(Error::shape(
                "conv1d_same",
                format!("bias [{br}x{bc}] vs {cout} output channels"),
            ));
        }
        let pad = k / 2;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; t_len * cout];
        for t in 0..t_len {
            let o = &mut out[t * cout..(t + 1) * cout];
            o.copy_from_slice(bv);
            for kk in 0..k {
                let s = t + kk;
                if s < pad || s - pad >= t_len {
                    continue;
                }
                let xr = &xv[(s - pad) * cin..(s - pad + 1) * cin];
                let wk = &wv[kk * cin * cout..(kk + 1) * cin * cout];
                for ci in 0..cin {
                    let xval = xr[ci];
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wk[ci * cout..(ci + 1) * cout];
                    for co in 0..cout {
                        o[co] += xval * wrow[co];
                    }
                }
            }
        }
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![t_len, cout], out)?,
            Op::Conv1dSame(x, w, b),
            rg,
        ))
    }

    // ---- backward --------------------------------------------------------

    /// Fills gradients of all `requires_grad` nodes with d(loss)/d(node).
    /// Repeated calls without [`Graph::zero_grads`] accumulate.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            self.propagate(i, &dy, &mut adj);
            // Accumulate into the persistent gradient.
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(g) => {
                    for (gv, dv) in g.iter_mut().zip(&dy) {
                        *gv += dv;
                    }
                }
                None => node.grad = Some(dy),
            }
        }
        Ok(())
    }

    /// Gradient vectors of the parameter nodes, in store order.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        (0..self.n_params)
            .map(|i| match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => vec![0.0; self.nodes[i].value.numel()],
            })
            .collect()
    }

    fn accum(adj: &mut [Option<Vec<f64>>], id: NodeId, numel: usize, f: impl FnOnce(&mut [f64])) {
        let slot = &mut adj[id.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; numel]);
        }
        f(slot.as_mut().unwrap());
    }

    fn propagate(&self, i: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let n = self.value(b).shape()[1];
                if self.requires(a) {
                    // dA = dY . B^T
                    let bv = self.value(b).data();
                    Self::accum(adj, a, m * k, |da| {
                        matmul_acc(dy, bv, da, m, n, k, false, true);
                    });
                }
                if self.requires(b) {
                    // dB = A^T . dY
                    let av = self.value(a).data();
                    Self::accum(adj, b, k * n, |db| {
                        matmul_acc(av, dy, db, k, m, n, true, false);
                    });
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if self.requires(id) {
                        Self::accum(adj, id, dy.len(), |g| {
                            for (gv, dv) in g.iter_mut().zip(dy) {
                                *gv += dv;
                            }
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires(a) {
                    Self::accum(adj, a, dy.len(), |g| {
                        for (gv, dv) in g.iter_mut().zip(dy) {
                            *gv += dv;
                        }
                    });
                }
                if self.requires(b) {
                    Self::accum(adj, b, dy.len(), |g| {
                        for (gv, dv) in g.iter_mut().zip(dy) {
                            *gv -= dv;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.requires(a) {
                    let bv = self.value(b).data();
                    Self::accum(adj, a, dy.len(), |g| {
                        for ((gv, dv), xv) in g.iter_mut().zip(dy).zip(bv) {
                            *gv += dv * xv;
                        }
                    });
                }
                if self.requires(b) {
                    let av = self.value(a).data();
                    Self::accum(adj, b, dy.len(), |g| {
                        for ((gv, dv), xv) in g.iter_mut().zip(dy).zip(av) {
                            *gv += dv * xv;
                        }
                    });
                }
            }
            Op::BcastAdd(m, v) | Op::BcastSub(m, v) | Op::BcastMul(m, v) => {
                let (rows, cols) = (self.value(m).shape()[0], self.value(m).shape()[1]);
                let is_mul = matches!(self.nodes[i].op, Op::BcastMul(..));
                let is_sub = matches!(self.nodes[i].op, Op::BcastSub(..));
                if self.requires(m) {
                    let vv = self.value(v).data();
                    Self::accum(adj, m, rows * cols, |g| {
                        for r in 0..rows {
                            for c in 0..cols {
                                let d = dy[r * cols + c];
                                g[r * cols + c] += if is_mul { d * vv[c] } else { d };
                            }
                        }
                    });
                }
                if self.requires(v) {
                    let mv = self.value(m).data();
                    Self::accum(adj, v, cols, |g| {
                        for r in 0..rows {
                            for c in 0..cols {
                                let d = dy[r * cols + c];
                                g[c] += if is_mul {
                                    d * mv[r * cols + c]
                                } else if is_sub {
                                    -d
                                } else {
                                    d
                                };
                            }
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                if self.requires(x) {
                    Self::accum(adj, x, dy.len(), |g| {
                        for (gv, dv) in g.iter_mut().zip(dy) {
                            *gv += dv * c;
                        }
                    });
                }
            }
            Op::AddScalar(x) => {
                if self.requires(x) {
                    Self::accum(adj, x, dy.len(), |g| {
                        for (gv, dv) in g.iter_mut().zip(dy) {
                            *gv += dv;
                        }
                    });
                }
            }
            Op::Powf(x, c) => {
                if self.requires(x) {
                    let xv = self.value(x).data();
                    Self::accum(adj, x, dy.len(), |g| {
                        for ((gv, dv), &v) in g.iter_mut().zip(dy).zip(xv) {
                            *gv += dv * c * v.powf(c - 1.0);
                        }
                    });
                }
            }
            Op::Exp(x) | Op::Tanh(x) | Op::Sigmoid(x) => {
                if self.requires(x) {
                    let yv = self.nodes[i].value.data();
                    let kind = self.nodes[i].op.clone();
                    Self::accum(adj, x, dy.len(), |g| {
                        for ((gv, dv), &y) in g.iter_mut().zip(dy).zip(yv) {
                            let d = match kind {
                                Op::Exp(_) => y,
                                Op::Tanh(_) => 1.0 - y * y,
                                _ => y * (1.0 - y),
                            };
                            *gv += dv * d;
                        }
                    });
                }
            }
            Op::Clamp(x, lo, hi) => {
                if self.requires(x) {
                    let xv = self.value(x).data();
                    Self::accum(adj, x, dy.len(), |g| {
                        for ((gv, dv), &v) in g.iter_mut().zip(dy).zip(xv) {
                            if v >= lo && v <= hi {
                                *gv += dv;
                            }
                        }
                    });
                }
            }
            Op::MeanAxis0(x) => {
                if self.requires(x) {
                    let (rows, cols) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                    let inv = 1.0 / rows as f64;
                    Self::accum(adj, x, rows * cols, |g| {
                        for r in 0..rows {
                            for c in 0..cols {
                                g[r * cols + c] += dy[c] * inv;
                            }
                        }
                    });
                }
            }
            Op::MeanAll(x) => {
                if self.requires(x) {
                    let n = self.value(x).numel();
                    let d = dy[0] / n as f64;
                    Self::accum(adj, x, n, |g| {
                        for gv in g.iter_mut() {
                            *gv += d;
                        }
                    });
                }
            }
            Op::SumAll(x) => {
                if self.requires(x) {
                    let n = self.value(x).numel();
                    let d = dy[0];
                    Self::accum(adj, x, n, |g| {
                        for gv in g.iter_mut() {
                            *gv += d;
                        }
                    });
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let numel = self.value(p).numel();
                    if self.requires(p) {
                        let slice = &dy[offset..offset + numel];
                        Self::accum(adj, p, numel, |g| {
                            for (gv, dv) in g.iter_mut().zip(slice) {
                                *gv += dv;
                            }
                        });
                    }
                    offset += numel;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = self.nodes[i].value.shape()[0];
                let total = self.nodes[i].value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.value(p).shape()[1];
                    if self.requires(p) {
                        let off = offset;
                        Self::accum(adj, p, rows * w, |g| {
                            for r in 0..rows {
                                for c in 0..w {
                                    g[r * w + c] += dy[r * total + off + c];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::SliceRows(x, start, _end) => {
                if self.requires(x) {
                    let (rows, cols) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                    Self::accum(adj, x, rows * cols, |g| {
                        for (k, dv) in dy.iter().enumerate() {
                            g[start * cols + k] += dv;
                        }
                    });
                }
            }
            Op::SliceCols(x, start, end) => {
                if self.requires(x) {
                    let (rows, cols) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                    let w = end - start;
                    Self::accum(adj, x, rows * cols, |g| {
                        for r in 0..rows {
                            for c in 0..w {
                                g[r * cols + start + c] += dy[r * w + c];
                            }
                        }
                    });
                }
            }
            Op::ReverseRows(x) => {
                if self.requires(x) {
                    let (rows, cols) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                    Self::accum(adj, x, rows * cols, |g| {
                        for r in 0..rows {
                            let src = &dy[(rows - 1 - r) * cols..(rows - r) * cols];
                            for c in 0..cols {
                                g[r * cols + c] += src[c];
                            }
                        }
                    });
                }
            }
            Op::Conv1dSame(x, w, b) => {
                let (t_len, cin) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                let ws = self.value(w).shape();
                let (k, cout) = (ws[0], ws[2]);
                let pad = k / 2;
                if self.requires(x) {
                    let wv = self.value(w).data();
                    Self::accum(adj, x, t_len * cin, |g| {
                        for t in 0..t_len {
                            let dr = &dy[t * cout..(t + 1) * cout];
                            for kk in 0..k {
                                let s = t + kk;
                                if s < pad || s - pad >= t_len {
                                    continue;
                                }
                                let wk = &wv[kk * cin * cout..(kk + 1) * cin * cout];
                                let gr = &mut g[(s - pad) * cin..(s - pad + 1) * cin];
                                for ci in 0..cin {
                                    let wrow = &wk[ci * cout..(ci + 1) * cout];
                                    let mut acc = 0.0;
                                    for co in 0..cout {
                                        acc += dr[co] * wrow[co];
                                    }
                                    gr[ci] += acc;
                                }
                            }
                        }
                    });
                }
                if self.requires(w) {
                    let xv = self.value(x).data();
                    Self::accum(adj, w, k * cin * cout, |g| {
                        for t in 0..t_len {
                            let dr = &dy[t * cout..(t + 1) * cout];
                            for kk in 0..k {
                                let s = t + kk;
                                if s < pad || s - pad >= t_len {
                                    continue;
                                }
                                let xr = &xv[(s - pad) * cin..(s - pad + 1) * cin];
                                let gk = &mut g[kk * cin * cout..(kk + 1) * cin * cout];
                                for ci in 0..cin {
                                    let xval = xr[ci];
                                    if xval == 0.0 {
                                        continue;
                                    }
                                    let grow = &mut gk[ci * cout..(ci + 1) * cout];
                                    for co in 0..cout {
                                        grow[co] += xval * dr[co];
                                    }
                                }
                            }
                        }
                    });
                }
                if self.requires(b) {
                    Self::accum(adj, b, cout, |g| {
                        for t in 0..t_len {
                            for co in 0..cout {
                                g[co] += dy[t * cout + co];
                            }
                        }
                    });
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `out += opA(a) . opB(b)` where the transpose flags select `a^T`/`b^T`.
/// Dimensions are of the (possibly transposed) operands: `[m x k] . [k x n]`.
#[allow(clippy::too_many_arguments)]
fn matmul_acc(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    // a is stored [m x k] or, when trans_a, [k x m]; same for b.
    for i in 0..m {
        for p in 0..k {
            let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            if trans_b {
                for j in 0..n {
                    orow[j] += av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let a = g.constant(t2(&[&[3.0, -1.0], &[2.5, 7.0]]));
        let y = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(y), g.value(a));
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn mean_of_constant_sequence_is_constant() {
        let mut g = Graph::new();
        let x = g.constant(t2(&[&[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0]]));
        let m = g.mean_axis0(x).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, -1.0]);
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        // Random 1x8 signal (single channel), kernel [1, -1].
        let sig = [0.3, -0.7, 1.1, 0.0, 2.2, -0.4, 0.9, 0.5];
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![8, 1], sig.to_vec()).unwrap());
        let w = g.constant(Tensor::new(vec![2, 1, 1], vec![1.0, -1.0]).unwrap());
        let b = g.constant(Tensor::zeros(&[1, 1]));
        let y = g.conv1d_same(x, w, b).unwrap();

        // Naive loop with the same zero-padding convention (pad = k/2 = 1).
        let k = 2usize;
        let pad = k / 2;
        let mut expect = vec![0.0; 8];
        for t in 0..8 {
            for kk in 0..k {
                let s = (t + kk) as isize - pad as isize;
                if s >= 0 && (s as usize) < 8 {
                    expect[t] += sig[s as usize] * [1.0, -1.0][kk];
                }
            }
        }
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_half_square_norm_gives_input() {
        let vals = vec![1.5, -2.0, 0.25];
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 3], vals.clone()).unwrap(), true);
        let sq = g.mul(p, p).unwrap();
        let s = g.sum_all(sq);
        let loss = g.scale(s, 0.5);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), vals.as_slice());
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap(), true);
        let loss = g.sum_all(p);
        g.backward(loss).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[2.0, 2.0]);
        g.zero_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0, 1.0]);
    }

    /// Central finite differences over every element of every leaf.
    pub(crate) fn finite_diff_check(
        build: impl Fn(&mut Graph, &[Tensor]) -> NodeId,
        leaves: &[Tensor],
        h: f64,
        tol: f64,
    ) {
        // Autodiff gradients.
        let mut g = Graph::new();
        let ids: Vec<NodeId> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, leaves);
        let _ = ids;
        g.backward(loss).unwrap();
        let grads: Vec<Vec<f64>> = (0..leaves.len())
            .map(|i| g.grad(NodeId(i)).unwrap().to_vec())
            .collect();

        let eval = |ls: &[Tensor]| -> f64 {
            let mut g = Graph::new();
            for t in ls {
                g.leaf(t.clone(), true);
            }
            let loss = build(&mut g, ls);
            g.value(loss).data()[0]
        };

        for (li, leaf) in leaves.iter().enumerate() {
            for e in 0..leaf.numel() {
                let mut plus = leaves.to_vec();
                plus[li].data_mut()[e] += h;
                let mut minus = leaves.to_vec();
                minus[li].data_mut()[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ad = grads[li][e];
                let denom = ad.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (ad - fd).abs() / denom < tol,
                    "leaf {li} elem {e}: autodiff {ad} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rnd = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()).unwrap()
        };
        let leaves = vec![rnd(vec![3, 4]), rnd(vec![4, 2]), rnd(vec![1, 2]), rnd(vec![3, 2])];
        finite_diff_check(
            |g, ls| {
                let x = NodeId(0);
                let w = NodeId(1);
                let b = NodeId(2);
                let o = NodeId(3);
                let _ = ls;
                let h = g.matmul(x, w).unwrap();
                let h = g.bcast_add(h, b).unwrap();
                let h = g.tanh(h);
                let s = g.sigmoid(h);
                let m = g.mul(h, s).unwrap();
                let c = g.concat_cols(&[m, o]).unwrap();
                let r = g.slice_cols(c, 1, 3).unwrap();
                let rr = g.reverse_rows(r).unwrap();
                let pooled = g.mean_axis0(rr).unwrap();
                let e = g.exp(pooled);
                let p = g.powf(e, 1.5);
                g.mean_all(p)
            },
            &leaves,
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn conv_and_norm_match_finite_differences() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rnd = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()).unwrap()
        };
        let leaves = vec![rnd(vec![6, 3]), rnd(vec![5, 3, 2]), rnd(vec![1, 2])];
        finite_diff_check(
            |g, _| {
                let y = g.conv1d_same(NodeId(0), NodeId(1), NodeId(2)).unwrap();
                // Instance-norm style composition: center, scale by inverse std.
                let mu = g.mean_axis0(y).unwrap();
                let centered = g.bcast_sub(y, mu).unwrap();
                let sq = g.mul(centered, centered).unwrap();
                let var = g.mean_axis0(sq).unwrap();
                let var_eps = g.add_scalar(var, 1e-3);
                let inv_std = g.powf(var_eps, -0.5);
                let normed = g.bcast_mul(centered, inv_std).unwrap();
                // A plain mean of normalized output is constant by
                // construction; exp makes the loss sensitive to it.
                let e = g.exp(normed);
                g.mean_all(e)
            },
            &leaves,
            1e-5,
            1e-5,
        );
    }
}
