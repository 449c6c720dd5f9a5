//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node whose parents have strictly smaller
//! indices, so walking the tape backwards is a valid reverse topological
//! order. Nodes built only from constants never receive gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor};
use super::ApproxError;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    filters: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Dense { x: usize, w: usize, b: usize, rows: usize, inputs: usize, outputs: usize },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom, cols: Vec<f64> },
    Relu(usize),
    Tanh(usize),
    Reshape(usize),
    LogSoftmax { x: usize, cols: usize },
    Gather { x: usize, cols: usize, index: Vec<usize> },
    SumRows { x: usize, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Min(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Square(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Create one per forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { graph: self.id, index: self.nodes.len() - 1 }
    }

    fn idx(&self, v: Var) -> Result<usize, ApproxError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(ApproxError::Detached);
        }
        Ok(v.index)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, ApproxError> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Learnable leaf; its gradient is reported under `slot` by [`Graph::backward`].
    /// Slots must be registered in order `0, 1, 2, ...`.
    pub fn param(&mut self, slot: usize, t: Tensor) -> Var {
        assert_eq!(slot, self.params.len(), "parameter slots must be registered in order");
        let v = self.push(t, Op::Param, true);
        self.params.push(v.index);
        v
    }

    /// `x[N, ...] · wᵀ + b` with `w[out, in]` and `b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, ApproxError> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let xs = self.nodes[xi].value.shape();
        let ws = self.nodes[wi].value.shape();
        if ws.len() != 2 {
            return Err(ApproxError::Shape(format!("dense weight must be 2-D, got {ws:?}")));
        }
        let rows = xs[0];
        let inputs = self.nodes[xi].value.len() / rows;
        let (outputs, w_in) = (ws[0], ws[1]);
        if w_in != inputs || self.nodes[bi].value.len() != outputs {
            return Err(ApproxError::Shape(format!(
                "dense expects {w_in} inputs per row and bias {outputs}, got input {xs:?} and bias {:?}",
                self.nodes[bi].value.shape()
            )));
        }
        let mut out = vec![0.0; rows * outputs];
        gemm(
            rows,
            inputs,
            outputs,
            self.nodes[xi].value.data(),
            (inputs as isize, 1),
            self.nodes[wi].value.data(),
            (1, inputs as isize),
            0.0,
            &mut out,
        );
        let bias = self.nodes[bi].value.data();
        for row in out.chunks_exact_mut(outputs) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let needs = self.needs(xi) || self.needs(wi) || self.needs(bi);
        let t = Tensor::new(vec![rows, outputs], out)?;
        Ok(self.push(t, Op::Dense { x: xi, w: wi, b: bi, rows, inputs, outputs }, needs))
    }

    /// Valid (unpadded) convolution on `x[N, H, W, C]` with `w[F, K, K, C]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, ApproxError> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != ws[2] || ws[3] != xs[3] {
            return Err(ApproxError::Shape(format!("conv2d expects x[N,H,W,C] and w[F,K,K,C], got {xs:?} and {ws:?}")));
        }
        let (n, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (filters, k) = (ws[0], ws[1]);
        if stride == 0 || k > h || k > wd || self.nodes[bi].value.len() != filters {
            return Err(ApproxError::Shape(format!("conv2d kernel {k} stride {stride} does not fit input {xs:?}")));
        }
        let geom = ConvGeom { n, h, w: wd, c, k, stride, oh: (h - k) / stride + 1, ow: (wd - k) / stride + 1, filters };
        let cols = im2col(self.nodes[xi].value.data(), &geom);
        let rows = n * geom.oh * geom.ow;
        let patch = k * k * c;
        let mut out = vec![0.0; rows * filters];
        gemm(
            rows,
            patch,
            filters,
            &cols,
            (patch as isize, 1),
            self.nodes[wi].value.data(),
            (1, patch as isize),
            0.0,
            &mut out,
        );
        let bias = self.nodes[bi].value.data();
        for row in out.chunks_exact_mut(filters) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let needs = self.needs(xi) || self.needs(wi) || self.needs(bi);
        let t = Tensor::new(vec![n, geom.oh, geom.ow, filters], out)?;
        Ok(self.push(t, Op::Conv2d { x: xi, w: wi, b: bi, geom, cols }, needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let t = self.nodes[xi].value.map(f);
        let needs = self.needs(xi);
        Ok(self.push(t, op(xi), needs))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, ApproxError> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, ApproxError> {
        self.unary(x, f64::tanh, Op::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, ApproxError> {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, ApproxError> {
        self.unary(x, |v| v * v, Op::Square)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, ApproxError> {
        self.unary(x, |v| v * factor, |i| Op::Scale(i, factor))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, ApproxError> {
        self.unary(x, |v| v.clamp(lo, hi), |i| Op::Clamp { x: i, lo, hi })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let t = self.nodes[xi].value.clone().reshaped(shape)?;
        let needs = self.needs(xi);
        Ok(self.push(t, Op::Reshape(xi), needs))
    }

    fn rows_cols(&self, xi: usize) -> Result<(usize, usize), ApproxError> {
        let s = self.nodes[xi].value.shape();
        if s.len() != 2 {
            return Err(ApproxError::Shape(format!("expected a 2-D tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// Row-wise log-softmax of a `[N, A]` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let (rows, cols) = self.rows_cols(xi)?;
        let mut out = self.nodes[xi].value.data().to_vec();
        for row in out.chunks_exact_mut(cols) {
            log_softmax_in_place(row);
        }
        let needs = self.needs(xi);
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, Op::LogSoftmax { x: xi, cols }, needs))
    }

    /// Picks `x[n, index[n]]` from a `[N, A]` tensor.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let (rows, cols) = self.rows_cols(xi)?;
        if index.len() != rows || index.iter().any(|&a| a >= cols) {
            return Err(ApproxError::Shape(format!("gather needs {rows} indices below {cols}, got {}", index.len())));
        }
        let src = self.nodes[xi].value.data();
        let out: Vec<f64> = index.iter().enumerate().map(|(r, &a)| src[r * cols + a]).collect();
        let needs = self.needs(xi);
        Ok(self.push(Tensor::from_vec(out), Op::Gather { x: xi, cols, index: index.to_vec() }, needs))
    }

    /// Sums each row of a `[N, A]` tensor into `[N]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let (rows, cols) = self.rows_cols(xi)?;
        let out: Vec<f64> = self.nodes[xi].value.data().chunks_exact(cols).map(|r| r.iter().sum()).collect();
        let needs = self.needs(xi);
        Ok(self.push(Tensor::from_vec(out), Op::SumRows { x: xi, rows, cols }, needs))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var, ApproxError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if ta.shape() != tb.shape() {
            return Err(ApproxError::Shape(format!(
                "elementwise operands differ: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(t, op(ai, bi), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ApproxError> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ApproxError> {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ApproxError> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, ApproxError> {
        self.binary(a, b, |x, y| if x <= y { x } else { y }, Op::Min)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, ApproxError> {
        let xi = self.idx(x)?;
        let t = &self.nodes[xi].value;
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(xi);
        Ok(self.push(Tensor::scalar(m), Op::Mean(xi), needs))
    }

    /// Reverse pass from a scalar node. Returns one gradient per parameter
    /// slot registered with [`Graph::param`], in slot order; parameters the
    /// loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>, ApproxError> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(ApproxError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].needs_grad {
            return Err(ApproxError::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = (0..=li).map(|_| None).collect();
        grads[li] = Some(Tensor::scalar(1.0));

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::Dense { x, w, b, rows, inputs, outputs } => {
                    let (rows, inputs, outputs) = (*rows, *inputs, *outputs);
                    if self.needs(*w) {
                        let mut dw = vec![0.0; outputs * inputs];
                        gemm(
                            outputs,
                            rows,
                            inputs,
                            g.data(),
                            (1, outputs as isize),
                            self.nodes[*x].value.data(),
                            (inputs as isize, 1),
                            0.0,
                            &mut dw,
                        );
                        accumulate(&mut grads, *w, self.nodes[*w].value.shape(), dw);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; outputs];
                        for row in g.data().chunks_exact(outputs) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *b, self.nodes[*b].value.shape(), db);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; rows * inputs];
                        gemm(
                            rows,
                            outputs,
                            inputs,
                            g.data(),
                            (outputs as isize, 1),
                            self.nodes[*w].value.data(),
                            (inputs as isize, 1),
                            0.0,
                            &mut dx,
                        );
                        accumulate(&mut grads, *x, self.nodes[*x].value.shape(), dx);
                    }
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let rows = geom.n * geom.oh * geom.ow;
                    let patch = geom.k * geom.k * geom.c;
                    let f = geom.filters;
                    if self.needs(*w) {
                        let mut dw = vec![0.0; f * patch];
                        gemm(f, rows, patch, g.data(), (1, f as isize), cols, (patch as isize, 1), 0.0, &mut dw);
                        accumulate(&mut grads, *w, self.nodes[*w].value.shape(), dw);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; f];
                        for row in g.data().chunks_exact(f) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *b, self.nodes[*b].value.shape(), db);
                    }
                    if self.needs(*x) {
                        let mut dcols = vec![0.0; rows * patch];
                        gemm(
                            rows,
                            f,
                            patch,
                            g.data(),
                            (f as isize, 1),
                            self.nodes[*w].value.data(),
                            (patch as isize, 1),
                            0.0,
                            &mut dcols,
                        );
                        let dx = col2im(&dcols, geom);
                        accumulate(&mut grads, *x, self.nodes[*x].value.shape(), dx);
                    }
                }
                Op::Relu(x) => {
                    let src = self.nodes[*x].value.data();
                    let d = g.data().iter().zip(src).map(|(&gv, &s)| if s > 0.0 { gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let d = g.data().iter().zip(y).map(|(&gv, &t)| gv * (1.0 - t * t)).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Exp(x) => {
                    let y = node.value.data();
                    let d = g.data().iter().zip(y).map(|(&gv, &e)| gv * e).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Square(x) => {
                    let src = self.nodes[*x].value.data();
                    let d = g.data().iter().zip(src).map(|(&gv, &s)| 2.0 * s * gv).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Scale(x, factor) => {
                    let d = g.data().iter().map(|&gv| gv * factor).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Clamp { x, lo, hi } => {
                    let src = self.nodes[*x].value.data();
                    let d =
                        g.data().iter().zip(src).map(|(&gv, &s)| if s >= *lo && s <= *hi { gv } else { 0.0 }).collect();
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), g.into_data());
                }
                Op::LogSoftmax { x, cols } => {
                    let y = node.value.data();
                    let mut d = g.data().to_vec();
                    for (drow, yrow) in d.chunks_exact_mut(*cols).zip(y.chunks_exact(*cols)) {
                        let total: f64 = drow.iter().sum();
                        for (dv, &lp) in drow.iter_mut().zip(yrow) {
                            *dv -= lp.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Gather { x, cols, index } => {
                    let mut d = vec![0.0; self.nodes[*x].value.len()];
                    for (r, (&a, &gv)) in index.iter().zip(g.data()).enumerate() {
                        d[r * cols + a] += gv;
                    }
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::SumRows { x, rows, cols } => {
                    let mut d = Vec::with_capacity(rows * cols);
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv, *cols));
                    }
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, node.value.shape(), g.data().to_vec());
                    }
                    accumulate(&mut grads, *a, node.value.shape(), g.into_data());
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        let d = g.data().iter().map(|v| -v).collect();
                        accumulate(&mut grads, *b, node.value.shape(), d);
                    }
                    accumulate(&mut grads, *a, node.value.shape(), g.into_data());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    if self.needs(*a) {
                        let d = g.data().iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                        accumulate(&mut grads, *a, node.value.shape(), d);
                    }
                    if self.needs(*b) {
                        let d = g.data().iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                        accumulate(&mut grads, *b, node.value.shape(), d);
                    }
                }
                Op::Min(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    let mut da = vec![0.0; va.len()];
                    let mut db = vec![0.0; vb.len()];
                    for i in 0..va.len() {
                        if va[i] <= vb[i] {
                            da[i] = g.data()[i];
                        } else {
                            db[i] = g.data()[i];
                        }
                    }
                    accumulate(&mut grads, *a, node.value.shape(), da);
                    accumulate(&mut grads, *b, node.value.shape(), db);
                }
                Op::Mean(x) => {
                    let n = self.nodes[*x].value.len();
                    let d = vec![g.data()[0] / n as f64; n];
                    accumulate(&mut grads, *x, self.nodes[*x].value.shape(), d);
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|&p| {
                grads.get_mut(p).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(self.nodes[p].value.shape()))
            })
            .collect())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: usize, shape: &[usize], data: Vec<f64>) {
    match &mut grads[target] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(data) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape mirrors value shape"));
        }
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.k * g.k * g.c;
    let mut cols = vec![0.0; g.n * g.oh * g.ow * patch];
    let mut r = 0;
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[r * patch..(r + 1) * patch];
                for ky in 0..g.k {
                    let src = ((n * g.h + oy * g.stride + ky) * g.w + ox * g.stride) * g.c;
                    let len = g.k * g.c;
                    dst[ky * len..(ky + 1) * len].copy_from_slice(&x[src..src + len]);
                }
                r += 1;
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let patch = g.k * g.k * g.c;
    let mut x = vec![0.0; g.n * g.h * g.w * g.c];
    let mut r = 0;
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[r * patch..(r + 1) * patch];
                for ky in 0..g.k {
                    let dst = ((n * g.h + oy * g.stride + ky) * g.w + ox * g.stride) * g.c;
                    let len = g.k * g.c;
                    for (d, s) in x[dst..dst + len].iter_mut().zip(&src[ky * len..(ky + 1) * len]) {
                        *d += s;
                    }
                }
                r += 1;
            }
        }
    }
    x
}
