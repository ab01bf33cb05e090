//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value; [`Tape::backward`]
//! replays the nodes in reverse and accumulates vector-Jacobian products.
//! Parameter leaves are cached per tape, so a parameter used several times
//! (e.g. a shared image encoder applied to every view) gets one leaf whose
//! gradient is the sum over all uses. Gradients are added into the
//! [`ParamStore`]; callers zero them between optimizer steps.

use std::collections::HashMap;

use crate::error::{contract, Error, Result};
use crate::geometry::metrics::chamfer_parts;
use crate::numerics::kernels;
use crate::{ParamStore, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; indexes the vector returned by
    /// [`Tape::gradients`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    GroupMax {
        x: Var,
        argmax: Vec<usize>,
    },
    RepeatRows {
        x: Var,
        k: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    MeanRows(Var),
    Sum(Var),
    Reshape(Var),
    Chamfer {
        a: Var,
        b: Var,
        nn_ab: Vec<usize>,
        nn_ba: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<String>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for the named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_leaves.get(name) {
            return Ok(v);
        }
        let mut value = store.get(name)?.clone();
        value.set_grad(None);
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_string());
        self.param_leaves.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.numel() != n {
            return Err(shape_err("add_row", ta.shape(), tr.shape()));
        }
        let mut data = ta.data().to_vec();
        for r in 0..m {
            for (d, &b) in data[r * n..(r + 1) * n].iter_mut().zip(tr.data()) {
                *d += b;
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).gelu();
        self.push(out, Op::Gelu(a))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = self.value(x).softmax(axis)?;
        Ok(self.push(out, Op::Softmax { x, axis }))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let tx = self.value(x);
        let cols = *tx.shape().last().unwrap();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != cols || tb.numel() != cols {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let (y, xhat, rstd) = kernels::layer_norm_rows(tx.data(), tg.data(), tb.data(), cols, eps);
        let out = Tensor::new(tx.shape(), y)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Max over consecutive groups of `k` rows: `[g·k, c] → [g, c]`.
    /// Ties resolve to the first row of the group.
    pub fn group_max(&mut self, x: Var, k: usize) -> Result<Var> {
        let (rows, c) = self.dims2(x)?;
        if k == 0 || rows % k != 0 {
            return Err(contract(format!(
                "group_max: {rows} rows not divisible into groups of {k}"
            )));
        }
        let g = rows / k;
        let data = self.value(x).data();
        let mut out = vec![T::zero(); g * c];
        let mut argmax = vec![0usize; g * c];
        for gi in 0..g {
            for j in 0..c {
                let mut best = gi * k;
                for r in gi * k + 1..(gi + 1) * k {
                    if data[r * c + j] > data[best * c + j] {
                        best = r;
                    }
                }
                out[gi * c + j] = data[best * c + j];
                argmax[gi * c + j] = best;
            }
        }
        let out = Tensor::new(&[g, c], out)?;
        Ok(self.push(out, Op::GroupMax { x, argmax }))
    }

    /// Repeats each row `k` times: `[g, c] → [g·k, c]`.
    pub fn repeat_rows(&mut self, x: Var, k: usize) -> Result<Var> {
        let (g, c) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(g * k * c);
        for gi in 0..g {
            for _ in 0..k {
                data.extend_from_slice(&src[gi * c..(gi + 1) * c]);
            }
        }
        let out = Tensor::new(&[g * k, c], data)?;
        Ok(self.push(out, Op::RepeatRows { x, k }))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.dims2(xs[0])?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.dims2(x)?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(xs[0]), self.shape(x)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(xs.to_vec())))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = self.dims2(xs[0])?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let (r, c) = self.dims2(x)?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(xs[0]), self.shape(x)));
            }
            rows += r;
            data.extend_from_slice(self.value(x).data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(xs.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start + len > r || len == 0 {
            return Err(contract(format!("slice_rows {start}+{len} out of range for {r} rows")));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(&[len, c], data)?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start + len > c || len == 0 {
            return Err(contract(format!("slice_cols {start}+{len} out of range for {c} cols")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&src[row * c + start..row * c + start + len]);
        }
        let out = Tensor::new(&[r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Row `i` of the output is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return Err(contract(format!("gather_rows index out of range for {r} rows")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[index.len(), c], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    /// Column means: `[m, n] → [1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n];
        for r in 0..m {
            for (d, &v) in data.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                *d += v;
            }
        }
        let inv = T::from_usize(m).unwrap().recip();
        data.iter_mut().for_each(|d| *d *= inv);
        let out = Tensor::new(&[1, n], data)?;
        Ok(self.push(out, Op::MeanRows(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// L1 Chamfer distance between two `[·, 3]` point sets, see
    /// [`crate::geometry::metrics::chamfer_l1`].
    pub fn chamfer_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ca) = self.dims2(a)?;
        let (_, cb) = self.dims2(b)?;
        if ca != 3 || cb != 3 {
            return Err(shape_err("chamfer_l1", self.shape(a), self.shape(b)));
        }
        let parts = chamfer_parts(self.value(a).data(), self.value(b).data());
        let (loss, nn_ab, nn_ba) = (parts.value, parts.nn_ab, parts.nn_ba);
        let out = Tensor::scalar(loss);
        Ok(self.push(out, Op::Chamfer { a, b, nn_ab, nn_ba }))
    }

    /// `x·W + b` with parameters `{prefix}.w` (`[in, out]`) and `{prefix}.b`.
    pub fn linear(&mut self, store: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(store, &format!("{prefix}.w"))?;
        let b = self.param(store, &format!("{prefix}.b"))?;
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>> {
        if self.value(loss).numel() != 1 {
            return Err(contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Accumulates `∂loss/∂p` into the gradient buffer of every parameter
    /// reached from `loss`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Some(name), Some(g)) = (&node.param, g) {
                store.get_mut(name)?.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, n) = (shp(*a)[0], shp(*a)[1]);
                let p = shp(*b)[1];
                let ga = slot(grads, *a, m * n);
                kernels::gemm_nt(g, val(*b), ga, m, p, n);
                let gb = slot(grads, *b, n * p);
                kernels::gemm_tn(val(*a), g, gb, n, m, p);
            }
            Op::Transpose(a) => {
                let (r, c) = (shp(*a)[0], shp(*a)[1]);
                let gt = kernels::transpose(g, c, r);
                add_into(slot(grads, *a, r * c), &gt);
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                let gb = slot(grads, *b, g.len());
                gb.iter_mut().zip(g).for_each(|(d, &v)| *d -= v);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * vb[i];
                }
                let gb = slot(grads, *b, g.len());
                for i in 0..g.len() {
                    gb[i] += g[i] * va[i];
                }
            }
            Op::AddRow(a, row) => {
                add_into(slot(grads, *a, g.len()), g);
                let n = self.nodes[row.0].value.numel();
                let gr = slot(grads, *row, n);
                for chunk in g.chunks(n) {
                    add_into(gr, chunk);
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *c);
            }
            Op::Gelu(a) => {
                let x = val(*a).to_vec();
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * kernels::gelu_grad(x[i]);
                }
            }
            Op::Softmax { x, axis } => {
                let (o, l, i) = kernels::axis_split(out.shape(), *axis);
                let gx = slot(grads, *x, g.len());
                kernels::softmax_axis_backward(out.data(), g, gx, o, l, i);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = *out.shape().last().unwrap();
                let gam = val(*gamma).to_vec();
                let n = T::from_usize(cols).unwrap();
                let mut gg = vec![T::zero(); cols];
                let mut gbt = vec![T::zero(); cols];
                let gx = slot(grads, *x, g.len());
                for (r, &rs) in rstd.iter().enumerate() {
                    let gy = &g[r * cols..(r + 1) * cols];
                    let xh = &xhat[r * cols..(r + 1) * cols];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for c in 0..cols {
                        let d = gy[c] * gam[c];
                        mean_d += d;
                        mean_dx += d * xh[c];
                        gg[c] += gy[c] * xh[c];
                        gbt[c] += gy[c];
                    }
                    mean_d /= n;
                    mean_dx /= n;
                    for c in 0..cols {
                        let d = gy[c] * gam[c];
                        gx[r * cols + c] += rs * (d - mean_d - xh[c] * mean_dx);
                    }
                }
                add_into(slot(grads, *gamma, cols), &gg);
                add_into(slot(grads, *beta, cols), &gbt);
            }
            Op::GroupMax { x, argmax } => {
                let c = out.shape()[1];
                let n = self.nodes[x.0].value.numel();
                let gx = slot(grads, *x, n);
                for (i, &src) in argmax.iter().enumerate() {
                    gx[src * c + i % c] += g[i];
                }
            }
            Op::RepeatRows { x, k } => {
                let c = out.shape()[1];
                let n = self.nodes[x.0].value.numel();
                let gx = slot(grads, *x, n);
                for (r, chunk) in g.chunks(c).enumerate() {
                    let dst = &mut gx[(r / k) * c..(r / k + 1) * c];
                    add_into(dst, chunk);
                }
            }
            Op::ConcatCols(xs) => {
                let rows = out.shape()[0];
                let total = out.shape()[1];
                let mut off = 0;
                for &x in xs {
                    let w = shp(x)[1];
                    let gx = slot(grads, x, rows * w);
                    for r in 0..rows {
                        add_into(&mut gx[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.nodes[x.0].value.numel();
                    add_into(slot(grads, x, n), &g[off..off + n]);
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = out.shape()[1];
                let n = self.nodes[x.0].value.numel();
                let gx = slot(grads, *x, n);
                add_into(&mut gx[start * c..start * c + g.len()], g);
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = (out.shape()[0], out.shape()[1]);
                let c = shp(*x)[1];
                let gx = slot(grads, *x, rows * c);
                for r in 0..rows {
                    add_into(&mut gx[r * c + start..r * c + start + len], &g[r * len..(r + 1) * len]);
                }
            }
            Op::GatherRows { x, index } => {
                let c = out.shape()[1];
                let n = self.nodes[x.0].value.numel();
                let gx = slot(grads, *x, n);
                for (r, &i) in index.iter().enumerate() {
                    add_into(&mut gx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = (shp(*x)[0], shp(*x)[1]);
                let inv = T::from_usize(m).unwrap().recip();
                let gx = slot(grads, *x, m * n);
                for r in 0..m {
                    for c in 0..n {
                        gx[r * n + c] += g[c] * inv;
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                slot(grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::Chamfer { a, b, nn_ab, nn_ba } => {
                let (pa, pb) = (val(*a).to_vec(), val(*b).to_vec());
                let (na, nb) = (nn_ab.len(), nn_ba.len());
                let two = T::of(2.0);
                let wa = g[0] / (two * T::from_usize(na).unwrap());
                let wb = g[0] / (two * T::from_usize(nb).unwrap());
                let mut ga = vec![T::zero(); na * 3];
                let mut gb = vec![T::zero(); nb * 3];
                chamfer_direction(&pa, &pb, nn_ab, wa, &mut ga, &mut gb);
                chamfer_direction(&pb, &pa, nn_ba, wb, &mut gb, &mut ga);
                add_into(slot(grads, *a, na * 3), &ga);
                add_into(slot(grads, *b, nb * 3), &gb);
            }
        }
    }
}

/// Subgradient of `w·Σ_p ‖p − q_nn(p)‖` into both clouds; zero at coincident
/// points.
fn chamfer_direction<T: Scalar>(from: &[T], to: &[T], nn: &[usize], w: T, g_from: &mut [T], g_to: &mut [T]) {
    for (i, &j) in nn.iter().enumerate() {
        let d = [
            from[i * 3] - to[j * 3],
            from[i * 3 + 1] - to[j * 3 + 1],
            from[i * 3 + 2] - to[j * 3 + 2],
        ];
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm == T::zero() {
            continue;
        }
        for c in 0..3 {
            let v = w * d[c] / norm;
            g_from[i * 3 + c] += v;
            g_to[j * 3 + c] -= v;
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
