//! Reverse-mode autodiff over a linear tape.
//!
//! A `Graph` records ops in creation order (which is already topological),
//! stores forward values per node, and replays the tape backwards to
//! accumulate gradients into the leaves. Graph construction and backward are
//! single-threaded; parallelism happens only across independent graphs, plus
//! inside individual matmul kernels where the output rows are disjoint.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Real, Tensor};

/// Handle to a node in one graph. Only valid for the graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    /// `a` plus a bias broadcast over its leading axes.
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x * mul + add` with scalar constants.
    Affine(Var, F, F),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        rstd: Vec<F>,
    },
    Log(Var),
    Exp(Var),
    Mean(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    LogSoftmax(Var),
}

struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    requires_grad: bool,
    op: Op<F>,
    /// Accumulated gradient; populated by `backward` for grad-bearing leaves.
    grad: Option<Vec<F>>,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, rg: bool, op: Op<F>) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad: rg,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    /// Inserts a tensor as an input node, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Inserts a tensor as a constant (never receives gradient).
    pub fn constant(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_from(&mut self, shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn value_tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.node(v).shape.clone(), self.node(v).value.clone())
            .expect("node shape consistent")
    }

    pub fn scalar_value(&self, v: Var) -> F {
        debug_assert_eq!(self.node(v).value.len(), 1);
        self.node(v).value[0]
    }

    /// Accumulated gradient of a grad-bearing leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.node(v).grad.as_deref()
    }

    fn finite(&self, v: Var, op: &'static str) -> Result<Var> {
        if self.node(v).value.iter().all(|x| x.is_finite()) {
            Ok(v)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let s = &self.node(v).shape;
        match s.len() {
            0 => (1, 1),
            1 => (1, s[0]),
            _ => {
                let cols = *s.last().unwrap();
                (self.node(v).value.len() / cols, cols)
            }
        }
    }

    // ---- forward ops ------------------------------------------------------

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul_nn(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        let v = self.push(vec![m, n], out, rg, Op::Matmul(a, b));
        self.finite(v, "matmul")
    }

    /// Elementwise add, or bias-add when `b`'s shape equals the trailing axes
    /// of `a` (broadcast over the leading batch axes only).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let out: Vec<F> = self
                .value(a)
                .iter()
                .zip(self.value(b))
                .map(|(&x, &y)| x + y)
                .collect();
            let rg = self.rg(a) || self.rg(b);
            let v = self.push(sa, out, rg, Op::Add(a, b));
            return self.finite(v, "add");
        }
        if sb.len() < sa.len() && sa[sa.len() - sb.len()..] == sb[..] {
            let mut out = self.value(a).to_vec();
            let blen: usize = sb.iter().product();
            let bias = self.value(b).to_vec();
            for row in out.chunks_mut(blen) {
                for (v, &x) in row.iter_mut().zip(&bias) {
                    *v = *v + x;
                }
            }
            let rg = self.rg(a) || self.rg(b);
            let v = self.push(sa, out, rg, Op::AddBias(a, b));
            return self.finite(v, "add");
        }
        Err(Error::shape("add", format!("{sa:?} + {sb:?}")))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape("sub", format!("{sa:?} - {sb:?}")));
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let v = self.push(sa, out, rg, Op::Sub(a, b));
        self.finite(v, "sub")
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(Error::shape("mul", format!("{sa:?} * {sb:?}")));
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let v = self.push(sa, out, rg, Op::Mul(a, b));
        self.finite(v, "mul")
    }

    /// `x * mul + add` with scalar constants (covers scalar-mul).
    pub fn affine(&mut self, x: Var, mul: F, add: F) -> Result<Var> {
        let out: Vec<F> = self.value(x).iter().map(|&v| v * mul + add).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::Affine(x, mul, add));
        self.finite(v, "affine")
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        self.affine(x, c, F::zero())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::relu(self.value(x));
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::Relu(x));
        self.finite(v, "relu")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(x));
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::Gelu(x));
        self.finite(v, "gelu")
    }

    /// Layer norm over the trailing axis with the fixed epsilon 1e-5.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x);
        let (out, rstd) = kernels::layer_norm_rows(self.value(x), cols, F::of(LN_EPS));
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::LayerNorm { x, rstd });
        self.finite(v, "layer_norm")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out: Vec<F> = self.value(x).iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::Log(x));
        self.finite(v, "log")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out: Vec<F> = self.value(x).iter().map(|&v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::Exp(x));
        self.finite(v, "exp")
    }

    /// Mean over all elements, producing a `[1]` scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = F::of(self.node(x).value.len() as f64);
        let s = self.value(x).iter().copied().sum::<F>() / n;
        let rg = self.rg(x);
        let v = self.push(vec![1], vec![s], rg, Op::Mean(x));
        self.finite(v, "mean")
    }

    /// Sum over all elements, producing a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum::<F>();
        let rg = self.rg(x);
        let v = self.push(vec![1], vec![s], rg, Op::Sum(x));
        self.finite(v, "sum")
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "sum_axis",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, mid, inner) = split3(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let orow = &mut out[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    orow[i] = orow[i] + xv[base + i];
                }
            }
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let rg = self.rg(x);
        let v = self.push(oshape, out, rg, Op::SumAxis { x, axis });
        self.finite(v, "sum_axis")
    }

    /// Concatenates same-rank tensors along `axis`; other dims must match.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat over empty list"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut cat_dim = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?}")));
            }
            for (d, (&a, &b)) in s.iter().zip(&first).enumerate() {
                if d != axis && a != b {
                    return Err(Error::shape("concat", format!("{s:?} vs {first:?}")));
                }
            }
            cat_dim += s[axis];
        }
        let mut oshape = first.clone();
        oshape[axis] = cat_dim;
        let (outer, _, inner) = split3(&oshape, axis);
        let mut out = vec![F::zero(); outer * cat_dim * inner];
        let mut offset = 0;
        for &p in parts {
            let s = self.shape(p).to_vec();
            let mid = s[axis];
            let pv = self.value(p);
            for o in 0..outer {
                let src = &pv[o * mid * inner..(o + 1) * mid * inner];
                let dst_base = (o * cat_dim + offset) * inner;
                out[dst_base..dst_base + mid * inner].copy_from_slice(src);
            }
            offset += mid;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let v = self.push(
            oshape,
            out,
            rg,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        );
        self.finite(v, "concat")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.node(x).value.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(x)),
            ));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Reshape(x)))
    }

    /// Takes `len` indices starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("[{start}..{}] on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, mid, inner) = split3(&shape, axis);
        let xv = self.value(x);
        let mut out = vec![F::zero(); outer * len * inner];
        for o in 0..outer {
            let src = &xv[(o * mid + start) * inner..(o * mid + start + len) * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let rg = self.rg(x);
        let v = self.push(oshape, out, rg, Op::Slice { x, axis, start });
        self.finite(v, "slice")
    }

    /// Numerically stable log-softmax over the trailing axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x);
        let out = kernels::log_softmax_rows(self.value(x), cols);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        let v = self.push(shape, out, rg, Op::LogSoftmax(x));
        self.finite(v, "log_softmax")
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates `d root / d leaf` into every grad-bearing leaf.
    ///
    /// Each call adds one unit of adjoint at the root, so running it twice on
    /// the same graph doubles the accumulated gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.node(root).value.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(vec![F::one()]);

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            // Local helper: add `delta` into the adjoint of `v` if it tracks grad.
            macro_rules! push_adj {
                ($v:expr, $delta:expr) => {{
                    let v: Var = $v;
                    if self.nodes[v.0].requires_grad {
                        let slot = adj[v.0]
                            .get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.len()]);
                        for (s, d) in slot.iter_mut().zip($delta) {
                            *s = *s + d;
                        }
                    }
                }};
            }

            match &self.nodes[id].op {
                Op::Leaf => {
                    let node = &mut self.nodes[id];
                    let slot = node.grad.get_or_insert_with(|| vec![F::zero(); g.len()]);
                    for (s, &d) in slot.iter_mut().zip(&g) {
                        *s = *s + d;
                    }
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = {
                        let s = &self.nodes[a.0].shape;
                        (s[0], s[1])
                    };
                    let n = self.nodes[b.0].shape[1];
                    let da = kernels::matmul_nt(&g, &self.nodes[b.0].value, m, n, k);
                    let db = kernels::matmul_tn(&self.nodes[a.0].value, &g, m, k, n);
                    push_adj!(a, da.iter().copied());
                    push_adj!(b, db.iter().copied());
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    push_adj!(a, g.iter().copied());
                    push_adj!(b, g.iter().copied());
                }
                Op::AddBias(a, b) => {
                    let (a, b) = (*a, *b);
                    let blen = self.nodes[b.0].value.len();
                    let mut db = vec![F::zero(); blen];
                    for row in g.chunks(blen) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    push_adj!(a, g.iter().copied());
                    push_adj!(b, db.iter().copied());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    push_adj!(a, g.iter().copied());
                    push_adj!(b, g.iter().map(|&v| -v));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[b.0].value)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let db: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    push_adj!(a, da.iter().copied());
                    push_adj!(b, db.iter().copied());
                }
                Op::Affine(x, mul, _) => {
                    let (x, mul) = (*x, *mul);
                    push_adj!(x, g.iter().map(|&v| v * mul));
                }
                Op::Relu(x) => {
                    let x = *x;
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[x.0].value)
                        .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                        .collect();
                    push_adj!(x, dx.iter().copied());
                }
                Op::Gelu(x) => {
                    let x = *x;
                    let dp = kernels::gelu_prime(&self.nodes[x.0].value);
                    push_adj!(x, g.iter().zip(&dp).map(|(&gv, &d)| gv * d));
                }
                Op::LayerNorm { x, rstd } => {
                    let x = *x;
                    let rstd = rstd.clone();
                    let cols = {
                        let s = &self.nodes[id].shape;
                        *s.last().unwrap()
                    };
                    let y = &self.nodes[id].value;
                    let nf = F::of(cols as f64);
                    let mut dx = vec![F::zero(); g.len()];
                    for r in 0..rstd.len() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gmean = gr.iter().copied().sum::<F>() / nf;
                        let gymean = gr
                            .iter()
                            .zip(yr)
                            .map(|(&gv, &yv)| gv * yv)
                            .sum::<F>()
                            / nf;
                        for ((d, &gv), &yv) in
                            dx[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(yr)
                        {
                            *d = rstd[r] * (gv - gmean - yv * gymean);
                        }
                    }
                    push_adj!(x, dx.iter().copied());
                }
                Op::Log(x) => {
                    let x = *x;
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[x.0].value)
                        .map(|(&gv, &xv)| gv / xv)
                        .collect();
                    push_adj!(x, dx.iter().copied());
                }
                Op::Exp(x) => {
                    let x = *x;
                    let dx: Vec<F> = g
                        .iter()
                        .zip(&self.nodes[id].value)
                        .map(|(&gv, &yv)| gv * yv)
                        .collect();
                    push_adj!(x, dx.iter().copied());
                }
                Op::Mean(x) => {
                    let x = *x;
                    let n = F::of(self.nodes[x.0].value.len() as f64);
                    let gv = g[0] / n;
                    let len = self.nodes[x.0].value.len();
                    push_adj!(x, std::iter::repeat(gv).take(len));
                }
                Op::Sum(x) => {
                    let x = *x;
                    let gv = g[0];
                    let len = self.nodes[x.0].value.len();
                    push_adj!(x, std::iter::repeat(gv).take(len));
                }
                Op::SumAxis { x, axis } => {
                    let (x, axis) = (*x, *axis);
                    let xshape = self.nodes[x.0].shape.clone();
                    let (outer, mid, inner) = split3(&xshape, axis);
                    let mut dx = vec![F::zero(); self.nodes[x.0].value.len()];
                    for o in 0..outer {
                        let gr = &g[o * inner..(o + 1) * inner];
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            for i in 0..inner {
                                dx[base + i] = dx[base + i] + gr[i];
                            }
                        }
                    }
                    push_adj!(x, dx.iter().copied());
                }
                Op::Concat { parts, axis } => {
                    let parts = parts.clone();
                    let axis = *axis;
                    let oshape = self.nodes[id].shape.clone();
                    let (outer, cat_dim, inner) = split3(&oshape, axis);
                    let mut offset = 0;
                    for p in parts {
                        let mid = self.nodes[p.0].shape[axis];
                        let mut dp = vec![F::zero(); self.nodes[p.0].value.len()];
                        for o in 0..outer {
                            let src_base = (o * cat_dim + offset) * inner;
                            dp[o * mid * inner..(o + 1) * mid * inner]
                                .copy_from_slice(&g[src_base..src_base + mid * inner]);
                        }
                        push_adj!(p, dp.iter().copied());
                        offset += mid;
                    }
                }
                Op::Reshape(x) => {
                    let x = *x;
                    push_adj!(x, g.iter().copied());
                }
                Op::Slice { x, axis, start } => {
                    let (x, axis, start) = (*x, *axis, *start);
                    let xshape = self.nodes[x.0].shape.clone();
                    let len = self.nodes[id].shape[axis];
                    let (outer, mid, inner) = split3(&xshape, axis);
                    let mut dx = vec![F::zero(); self.nodes[x.0].value.len()];
                    for o in 0..outer {
                        let dst = (o * mid + start) * inner;
                        dx[dst..dst + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    push_adj!(x, dx.iter().copied());
                }
                Op::LogSoftmax(x) => {
                    let x = *x;
                    let cols = *self.nodes[id].shape.last().unwrap();
                    let y = self.nodes[id].value.clone();
                    let mut dx = vec![F::zero(); g.len()];
                    for r in 0..g.len() / cols {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gsum = gr.iter().copied().sum::<F>();
                        for ((d, &gv), &yv) in
                            dx[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(yr)
                        {
                            *d = gv - yv.exp() * gsum;
                        }
                    }
                    push_adj!(x, dx.iter().copied());
                }
            }
        }
        Ok(())
    }
}

/// Layer-norm epsilon, fixed across the crate.
pub const LN_EPS: f64 = 1e-5;

/// Splits a shape at `axis` into (outer, axis, inner) extents.
fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new([rows, cols], data).unwrap()
    }

    #[test]
    fn matmul_identity_case() {
        let mut g = Graph::new();
        let a = g.constant(&t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let id = g.constant(&t2(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(a, id).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn layer_norm_constant_input_zeroed() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![1.0f64, 1.0, 1.0, 1.0]));
        let y = g.layer_norm(x).unwrap();
        for &v in g.value(y) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn mean_of_constant_tensor() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::full([3, 4], 2.5f64));
        let m = g.mean(x).unwrap();
        assert_eq!(g.scalar_value(m), 2.5);
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![3.0f64, -1.0, 7.0]).with_grad());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_of_squares_hand_gradient() {
        // d/dx mean(x*x) = 2x/n, x = [1,2,3] -> [2/3, 4/3, 2]
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![1.0f64, 2.0, 3.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let m = g.mean(sq).unwrap();
        g.backward(m).unwrap();
        let grad = g.grad(x).unwrap();
        let expect = [2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, e) in grad.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_pick_gradient_closed_form() {
        // d/dx log(softmax(x))[k] = onehot(k) - softmax(x)
        let xs = vec![0.3f64, -1.2, 2.0, 0.7];
        let k = 2usize;
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(xs.clone()).with_grad());
        let ls = g.log_softmax(x).unwrap();
        let picked = g.slice(ls, 0, k, 1).unwrap();
        let root = g.sum(picked).unwrap();
        g.backward(root).unwrap();
        let grad = g.grad(x).unwrap();
        let sm = kernels::softmax_rows(&xs, 4);
        for i in 0..4 {
            let expect = if i == k { 1.0 - sm[i] } else { -sm[i] };
            assert!((grad[i] - expect).abs() < 1e-12, "{i}: {} vs {expect}", grad[i]);
        }
    }

    #[test]
    fn backward_twice_doubles_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![1.0f64, 2.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        let first = g.grad(x).unwrap().to_vec();
        g.backward(s).unwrap();
        let second = g.grad(x).unwrap().to_vec();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_vec(vec![1.0f64, 2.0]).with_grad());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_reports_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&t2(2, 3, vec![0.0; 6]));
        let b = g.constant(&t2(2, 3, vec![0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn log_of_negative_is_numeric_error() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![-1.0f64]));
        assert!(g.log(x).is_err());
    }

    #[test]
    fn forward_ops_deterministic_bitwise() {
        let data: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin()).collect();
        let w: Vec<f32> = (0..64).map(|i| (i as f32 * 0.11).cos()).collect();
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(&Tensor::new([8, 8], data.clone()).unwrap());
            let m = g.constant(&Tensor::new([8, 8], w.clone()).unwrap());
            let y = g.matmul(x, m).unwrap();
            let y = g.gelu(y).unwrap();
            let y = g.layer_norm(y).unwrap();
            g.value(y).to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.constant(&t2(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(&t2(2, 3, vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 5]);
        assert_eq!(g.value(c), &[1.0, 2.0, 5.0, 6.0, 7.0, 3.0, 4.0, 8.0, 9.0, 10.0]);
        let back = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(back), &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn sum_axis_values_and_shape() {
        let mut g = Graph::new();
        let x = g.constant(&t2(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s0 = g.sum_axis(x, 0).unwrap();
        assert_eq!(g.shape(s0), &[3]);
        assert_eq!(g.value(s0), &[5.0, 7.0, 9.0]);
        let s1 = g.sum_axis(x, 1).unwrap();
        assert_eq!(g.shape(s1), &[2]);
        assert_eq!(g.value(s1), &[6.0, 15.0]);
    }

    #[test]
    fn bias_add_backward_sums_rows() {
        let mut g = Graph::new();
        let x = g.constant(&t2(3, 2, vec![0.0; 6]));
        let b = g.leaf(&Tensor::from_vec(vec![1.0f64, 2.0]).with_grad());
        let y = g.add(x, b).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
    }
}
