//! Tensor-granularity reverse-mode autodiff.
//!
//! Every primitive records one node holding its forward value. Gradients are
//! produced by [`Tape::grad`], which records the backward pass as ordinary
//! nodes on the same tape. Gradients are therefore differentiable again,
//! which is what the critic's gradient penalty needs.
//!
//! Nodes only ever refer to earlier nodes, so node index order is a
//! topological order.

use std::fmt;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a fused op: receives the output adjoint and
/// returns one adjoint per input (in input order).
pub type VjpFn = Rc<dyn Fn(&mut Tape, Var) -> Result<Vec<Var>>>;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow { x: Var, row: Var },
    SumRows { x: Var },
    BroadcastRows { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, c: f32 },
    AddScalar { x: Var },
    LeakyRelu { x: Var, slope: f32 },
    LeakyReluGrad { g: Var, x: Var, slope: f32 },
    Sqrt { x: Var },
    SumAll { x: Var },
    Expand { x: Var },
    SumCols { x: Var },
    BroadcastCols { x: Var },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    RowLinear { x: Var, mats: Rc<[f32]>, rows_out: usize, cols_in: usize, transposed: bool },
    Custom { inputs: Vec<Var>, vjp: VjpFn },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Div { a, b } => vec![*a, *b],
            Op::AddRow { x, row } => vec![*x, *row],
            Op::LeakyReluGrad { g, x, .. } => vec![*g, *x],
            Op::SumRows { x }
            | Op::BroadcastRows { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::LeakyRelu { x, .. }
            | Op::Sqrt { x }
            | Op::SumAll { x }
            | Op::Expand { x }
            | Op::SumCols { x }
            | Op::BroadcastCols { x, .. }
            | Op::SliceCols { x, .. }
            | Op::PadCols { x, .. }
            | Op::RowLinear { x, .. } => vec![*x],
            Op::ConcatCols { parts } => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> Error {
    Error::Shape {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Input, constant or parameter. Whether a leaf receives gradients is
    /// decided by the `wrt` list handed to [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Records a fused op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, vjp: VjpFn) -> Var {
        self.push(Op::Custom { inputs, vjp }, value)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a matrix.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ad = av.dims2();
        let bd = bv.dims2();
        let k_a = if ta { ad.0 } else { ad.1 };
        let k_b = if tb { bd.1 } else { bd.0 };
        if k_a != k_b {
            return Err(shape_err("matmul", av, bv));
        }
        let (c, m, n) = gemm(av.data(), ad, ta, bv.data(), bd, tb);
        let value = Tensor::new(vec![m, n], c)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let (m, n) = xv.dims2();
        if rv.dims2() != (1, n) {
            return Err(shape_err("add_row", xv, rv));
        }
        let r = rv.data();
        let mut out = xv.data().to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::AddRow { x, row }, value))
    }

    /// Column sums of `x`, shaped like `shape` (which must hold `cols` values).
    fn sum_rows_shaped(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (_, n) = xv.dims2();
        let mut out = vec![0.0f32; n];
        for row in xv.data().chunks(n.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::SumRows { x }, value))
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).cols();
        self.sum_rows_shaped(x, vec![1, n])
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, n) = xv.dims2();
        if r != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                left: xv.shape().to_vec(),
                right: vec![1, n],
            });
        }
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(xv.data());
        }
        let value = Tensor::new(vec![rows, n], out)?;
        Ok(self.push(Op::BroadcastRows { x }, value))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() || av.dims2() != bv.dims2() {
            return Err(shape_err(name, av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "div", |x, y| x / y)?;
        Ok(self.push(Op::Div { a, b }, value))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(Op::Scale { x, c }, value)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar { x }, value)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu { x, slope }, value)
    }

    fn leaky_relu_grad(&mut self, g: Var, x: Var, slope: f32) -> Result<Var> {
        let value = self.zip_with(g, x, "leaky_relu_grad", |gv, xv| {
            if xv > 0.0 {
                gv
            } else {
                slope * gv
            }
        })?;
        Ok(self.push(Op::LeakyReluGrad { g, x, slope }, value))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f32::sqrt);
        self.push(Op::Sqrt { x }, value)
    }

    fn sum_all_shaped(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let s: f32 = self.value(x).data().iter().sum();
        let value = Tensor::new(shape, vec![s])?;
        Ok(self.push(Op::SumAll { x }, value))
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        self.sum_all_shaped(x, vec![1])
            .expect("a single value always fits shape [1]")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f32)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.value(x).item()?;
        let value = Tensor::filled(shape, s);
        Ok(self.push(Op::Expand { x }, value))
    }

    /// Per-row sums, `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        let out = xv.data().chunks(n.max(1)).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![m, 1], out)?;
        Ok(self.push(Op::SumCols { x }, value))
    }

    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, c) = xv.dims2();
        if c != 1 {
            return Err(Error::Shape {
                op: "broadcast_cols",
                left: xv.shape().to_vec(),
                right: vec![m, 1],
            });
        }
        let mut out = Vec::with_capacity(m * cols);
        for &v in xv.data() {
            out.extend(std::iter::repeat_n(v, cols));
        }
        let value = Tensor::new(vec![m, cols], out)?;
        Ok(self.push(Op::BroadcastCols { x }, value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let m = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != m {
                return Err(shape_err("concat_cols", self.value(*first), v));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv.data()[r * n + start..r * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], out)?;
        Ok(self.push(Op::SliceCols { x, start }, value))
    }

    fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        let mut out = vec![0.0f32; m * total];
        for r in 0..m {
            out[r * total + start..r * total + start + n]
                .copy_from_slice(&xv.data()[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(Op::PadCols { x, start }, value))
    }

    /// Applies a separate matrix to each row: `y_r = A_r · x_r`.
    ///
    /// `mats` holds one row-major `[rows_out, cols_in]` matrix per row of
    /// `x`. With `transposed`, `A_rᵀ` is applied instead.
    pub fn row_linear(
        &mut self,
        x: Var,
        mats: Rc<[f32]>,
        rows_out: usize,
        cols_in: usize,
        transposed: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims2();
        let (inp, out_w) = if transposed {
            (rows_out, cols_in)
        } else {
            (cols_in, rows_out)
        };
        if n != inp || mats.len() != m * rows_out * cols_in {
            return Err(Error::Shape {
                op: "row_linear",
                left: xv.shape().to_vec(),
                right: vec![m, rows_out, cols_in],
            });
        }
        let block = rows_out * cols_in;
        let mut out = vec![0.0f32; m * out_w];
        for r in 0..m {
            let a = &mats[r * block..(r + 1) * block];
            let xr = &xv.data()[r * n..(r + 1) * n];
            let yr = &mut out[r * out_w..(r + 1) * out_w];
            for i in 0..rows_out {
                for j in 0..cols_in {
                    let aij = a[i * cols_in + j];
                    if transposed {
                        yr[j] += aij * xr[i];
                    } else {
                        yr[i] += aij * xr[j];
                    }
                }
            }
        }
        let value = Tensor::new(vec![m, out_w], out)?;
        Ok(self.push(
            Op::RowLinear {
                x,
                mats,
                rows_out,
                cols_in,
                transposed,
            },
            value,
        ))
    }

    /// Differentiates the scalar `loss` with respect to each of `wrt`.
    ///
    /// The backward pass is recorded on this tape, so the returned gradient
    /// nodes can themselves be differentiated. Leaves that `loss` does not
    /// depend on get a zero gradient of their own shape.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let end = loss.0 + 1;

        // Nodes that depend on any requested variable.
        let mut requires = vec![false; end];
        for w in wrt {
            if w.0 < end {
                requires[w.0] = true;
            }
        }
        for i in 0..end {
            if !requires[i] && self.nodes[i].op.inputs().iter().any(|p| requires[p.0]) {
                requires[i] = true;
            }
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; end];
        if requires[loss.0] {
            let seed = self.leaf(Tensor::filled(lv.shape(), 1.0));
            adjoint[loss.0] = Some(seed);
        }

        for i in (0..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes[i].op.clone();
            let inputs = op.inputs();
            if inputs.is_empty() || !inputs.iter().any(|p| requires[p.0]) {
                continue;
            }
            let contributions = self.vjp(&op, Var(i), g, &requires)?;
            for (input, contrib) in inputs.into_iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                adjoint[input.0] = Some(match adjoint[input.0] {
                    Some(acc) => self.add(acc, c)?,
                    None => c,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.value(w).shape().to_vec();
                    Ok(self.leaf(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Per-input adjoints for node `out` given its adjoint `g`. Entries are
    /// `None` for inputs that do not require gradients.
    fn vjp(&mut self, op: &Op, out: Var, g: Var, requires: &[bool]) -> Result<Vec<Option<Var>>> {
        let need = |v: &Var| requires[v.0];
        Ok(match *op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, ta, tb } => {
                let da = if need(&a) {
                    Some(if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    })
                } else {
                    None
                };
                let db = if need(&b) {
                    Some(if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    })
                } else {
                    None
                };
                vec![da, db]
            }
            Op::AddRow { x, row } => {
                let dr = if need(&row) {
                    let shape = self.value(row).shape().to_vec();
                    Some(self.sum_rows_shaped(g, shape)?)
                } else {
                    None
                };
                vec![need(&x).then_some(g), dr]
            }
            Op::SumRows { x } => {
                let m = self.value(x).rows();
                vec![Some(self.broadcast_rows(g, m)?)]
            }
            Op::BroadcastRows { x, .. } => {
                let shape = self.value(x).shape().to_vec();
                vec![Some(self.sum_rows_shaped(g, shape)?)]
            }
            Op::Add { a, b } => vec![need(&a).then_some(g), need(&b).then_some(g)],
            Op::Sub { a, b } => {
                let db = if need(&b) { Some(self.scale(g, -1.0)) } else { None };
                vec![need(&a).then_some(g), db]
            }
            Op::Mul { a, b } => {
                let da = if need(&a) { Some(self.mul(g, b)?) } else { None };
                let db = if need(&b) { Some(self.mul(g, a)?) } else { None };
                vec![da, db]
            }
            Op::Div { a, b } => {
                let da = if need(&a) { Some(self.div(g, b)?) } else { None };
                let db = if need(&b) {
                    let go = self.mul(g, out)?;
                    let q = self.div(go, b)?;
                    Some(self.scale(q, -1.0))
                } else {
                    None
                };
                vec![da, db]
            }
            Op::Scale { c, .. } => vec![Some(self.scale(g, c))],
            Op::AddScalar { .. } => vec![Some(g)],
            Op::LeakyRelu { x, slope } => vec![Some(self.leaky_relu_grad(g, x, slope)?)],
            // The mask is piecewise constant in x, so x gets no adjoint.
            Op::LeakyReluGrad { g: gin, x, slope } => {
                let dg = if need(&gin) {
                    Some(self.leaky_relu_grad(g, x, slope)?)
                } else {
                    None
                };
                vec![dg, None]
            }
            Op::Sqrt { .. } => {
                let two_out = self.scale(out, 2.0);
                vec![Some(self.div(g, two_out)?)]
            }
            Op::SumAll { x } => {
                let shape = self.value(x).shape().to_vec();
                vec![Some(self.expand(g, &shape)?)]
            }
            Op::Expand { x } => {
                let shape = self.value(x).shape().to_vec();
                vec![Some(self.sum_all_shaped(g, shape)?)]
            }
            Op::SumCols { x } => {
                let n = self.value(x).cols();
                vec![Some(self.broadcast_cols(g, n)?)]
            }
            Op::BroadcastCols { .. } => vec![Some(self.sum_cols(g)?)],
            Op::ConcatCols { ref parts } => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.value(*p).cols();
                    out.push(if need(p) {
                        Some(self.slice_cols(g, start, w)?)
                    } else {
                        None
                    });
                    start += w;
                }
                out
            }
            Op::SliceCols { x, start, .. } => {
                let total = self.value(x).cols();
                vec![Some(self.pad_cols(g, start, total)?)]
            }
            Op::PadCols { x, start, .. } => {
                let len = self.value(x).cols();
                vec![Some(self.slice_cols(g, start, len)?)]
            }
            Op::RowLinear {
                ref mats,
                rows_out,
                cols_in,
                transposed,
                ..
            } => vec![Some(self.row_linear(
                g,
                mats.clone(),
                rows_out,
                cols_in,
                !transposed,
            )?)],
            Op::Custom {
                ref inputs,
                ref vjp,
            } => {
                let grads = vjp(self, g)?;
                if grads.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op returned {} adjoints for {} inputs",
                        grads.len(),
                        inputs.len()
                    )));
                }
                inputs
                    .iter()
                    .zip(grads)
                    .map(|(i, gr)| need(i).then_some(gr))
                    .collect()
            }
        })
    }
}
