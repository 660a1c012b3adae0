use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::loss::{smooth_l1_slope, smooth_l1_value};
use super::tensor::Tensor;
use crate::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<usize>,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias {
        x: usize,
        b: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Mean(usize),
    GlobalAvgPool(usize),
    SmoothL1 {
        pred: usize,
        target: usize,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

/// Ordered record of primitive applications. Nodes are appended only after
/// their operands, so the record is always topologically sorted.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
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
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn value(&self, idx: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[idx].value)
    }

    /// Gradients of the scalar `loss` with respect to every value on this tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if loss.tape.id != self.id {
            return Err(Error::Tape);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.idx].value;
        if root.numel() != 1 {
            return Err(Error::Rank(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            // operands always precede node i, so taking its gradient out is safe
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, &g, false, bv.data(), true, 0.0, &mut ga);
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, &g, false, 0.0, &mut gb);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Conv2d { x, w, geom } => {
                    let (dx, dw) = kernels::conv2d_backward(
                        geom,
                        nodes[*x].value.data(),
                        nodes[*w].value.data(),
                        &g,
                    );
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::MaxPool2d { x, argmax } => {
                    let mut dx = vec![0.0; nodes[*x].value.numel()];
                    for (gi, &src) in g.iter().zip(argmax) {
                        dx[src] += gi;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xv = nodes[*x].value.data();
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g
                        .iter()
                        .zip(out.data())
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = g
                        .iter()
                        .zip(out.data())
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    let neg = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let ga = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                    let gb = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, s) => {
                    let dx = g.iter().map(|gi| gi * s).collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::AddBias { x, b } => {
                    let shape = out.shape();
                    let ch = shape[1];
                    let inner: usize = shape[2..].iter().product();
                    let mut gb = vec![0.0; ch];
                    for (i, gi) in g.iter().enumerate() {
                        gb[(i / inner) % ch] += gi;
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *b, gb);
                }
                Op::Concat { inputs, axis } => {
                    let shape = out.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for &inp in inputs {
                        let width = nodes[inp].value.shape()[*axis] * inner;
                        let mut d = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            let start = o * total + offset;
                            d.extend_from_slice(&g[start..start + width]);
                        }
                        accumulate(&mut grads, inp, d);
                        offset += width;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let in_shape = nodes[*x].value.shape();
                    let outer: usize = in_shape[..*axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let total = in_shape[*axis] * inner;
                    let width = out.shape()[*axis] * inner;
                    let mut dx = vec![0.0; nodes[*x].value.numel()];
                    for o in 0..outer {
                        let dst = o * total + start * inner;
                        dx[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g.clone()),
                Op::Mean(x) => {
                    let n = nodes[*x].value.numel();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::GlobalAvgPool(x) => {
                    let s = nodes[*x].value.shape();
                    let plane = s[2] * s[3];
                    let mut dx = Vec::with_capacity(nodes[*x].value.numel());
                    for gi in &g {
                        dx.extend(std::iter::repeat_n(gi / plane as f64, plane));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SmoothL1 { pred, target } => {
                    let p = nodes[*pred].value.data();
                    let t = nodes[*target].value.data();
                    let scale = g[0] / p.len() as f64;
                    let dp: Vec<f64> = p
                        .iter()
                        .zip(t)
                        .map(|(pi, ti)| scale * smooth_l1_slope(pi - ti))
                        .collect();
                    let dt = dp.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *pred, dp);
                    accumulate(&mut grads, *target, dt);
                }
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .enumerate()
            .map(|(i, (g, node))| {
                if i > loss.idx {
                    return None;
                }
                g.map(|v| Tensor::new(node.value.shape().to_vec(), v).expect("grad shape"))
            })
            .collect();
        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: Vec<f64>) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Result<Option<&Tensor>> {
        if v.tape.id != self.tape_id {
            return Err(Error::Tape);
        }
        Ok(self.grads[v.idx].as_ref())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(tape {}, node {}, shape {:?})", self.tape.id, self.idx, self.shape())
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if self.tape.id == other.tape.id {
            Ok(())
        } else {
            Err(Error::Tape)
        }
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.tape.push(Tensor::new(a.shape().to_vec(), data)?, op))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.idx, other.idx), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.idx, other.idx), |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.idx, other.idx), |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, s), |x| x * s)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.idx), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.idx), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.idx), f64::tanh)
    }

    /// (m, k) x (k, n) matrix product.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut c);
        Ok(self
            .tape
            .push(Tensor::new([m, n], c)?, Op::MatMul(self.idx, other.idx)))
    }

    /// Adds a per-channel bias `b` of shape (C,) to a tensor of shape (B, C, ...).
    pub fn add_bias(&self, b: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&b)?;
        let x = self.value();
        let bv = b.value();
        if x.rank() < 2 || bv.rank() != 1 || bv.shape()[0] != x.shape()[1] {
            return Err(shape_err("add_bias", x.shape(), bv.shape()));
        }
        let ch = x.shape()[1];
        let inner: usize = x.shape()[2..].iter().product();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.data()[(i / inner) % ch])
            .collect();
        Ok(self.tape.push(
            Tensor::new(x.shape().to_vec(), data)?,
            Op::AddBias {
                x: self.idx,
                b: b.idx,
            },
        ))
    }

    /// Cross-correlation of NCHW input with OIHW square kernels.
    pub fn conv2d(&self, w: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        self.same_tape(&w)?;
        let x = self.value();
        let wv = w.value();
        let (xs, ws) = (x.shape(), wv.shape());
        if xs.len() != 4
            || ws.len() != 4
            || ws[1] != xs[1]
            || ws[2] != ws[3]
            || stride == 0
            || xs[2] + 2 * padding < ws[2]
            || xs[3] + 2 * padding < ws[3]
        {
            return Err(shape_err("conv2d", xs, ws));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            height: xs[2],
            width: xs[3],
            out_ch: ws[0],
            kernel: ws[2],
            stride,
            padding,
        };
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(&geom, x.data(), wv.data());
        Ok(self.tape.push(
            Tensor::new([xs[0], ws[0], ho, wo], out)?,
            Op::Conv2d {
                x: self.idx,
                w: w.idx,
                geom,
            },
        ))
    }

    pub fn maxpool2d(&self, window: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || window == 0 || stride == 0 || s[2] < window || s[3] < window {
            return Err(shape_err("maxpool2d", s, &[window, window]));
        }
        let (out, argmax) =
            kernels::maxpool2d_forward(x.data(), s[0] * s[1], s[2], s[3], window, stride);
        let ho = (s[2] - window) / stride + 1;
        let wo = (s[3] - window) / stride + 1;
        Ok(self.tape.push(
            Tensor::new([s[0], s[1], ho, wo], out)?,
            Op::MaxPool2d {
                x: self.idx,
                argmax,
            },
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::EmptyInput("concat"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(shape_err("concat", &base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let width = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * width..(o + 1) * width]);
            }
        }
        Ok(first.tape.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: parts.iter().map(|p| p.idx).collect(),
                axis,
            },
        ))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(shape_err("slice", s, &[axis, start, len]));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let total = s[axis] * inner;
        let mut shape = s.to_vec();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * total + start * inner;
            data.extend_from_slice(&x.data()[from..from + len * inner]);
        }
        Ok(self.tape.push(
            Tensor::new(shape, data)?,
            Op::Slice {
                x: self.idx,
                axis,
                start,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = (*self.value()).clone().reshaped(shape.to_vec())?;
        Ok(self.tape.push(x, Op::Reshape(self.idx)))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let m = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.tape.push(Tensor::scalar(m), Op::Mean(self.idx))
    }

    /// (B, C, H, W) -> (B, C) spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var<'t>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 {
            return Err(shape_err("global_avg_pool", s, &[4]));
        }
        let plane = s[2] * s[3];
        let data = x
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(self
            .tape
            .push(Tensor::new([s[0], s[1]], data)?, Op::GlobalAvgPool(self.idx)))
    }

    /// Mean smooth-L1 of the residual `self - target` over all elements.
    pub fn smooth_l1_loss(&self, target: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&target)?;
        let p = self.value();
        let t = target.value();
        if p.shape() != t.shape() {
            return Err(shape_err("smooth_l1_loss", p.shape(), t.shape()));
        }
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| smooth_l1_value(a - b))
            .sum();
        Ok(self.tape.push(
            Tensor::scalar(sum / p.numel() as f64),
            Op::SmoothL1 {
                pred: self.idx,
                target: target.idx,
            },
        ))
    }
}
