//! Tape-based reverse-mode differentiation.
//!
//! Operators record their inputs (and whatever the backward pass needs) on a
//! [`Tape`] as they compute values. [`Tape::backward`] then walks the tape in
//! reverse, accumulating gradients for every node that depends on a parameter.

mod kernels;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use kernels::ConvGeom;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearities and pooling accepted by
/// [`Tape::pointwise_and_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseKind {
    Relu,
    Tanh,
    Sigmoid,
    MaxPool { k: usize, stride: usize },
}

impl FromStr for PointwiseKind {
    type Err = Error;

    /// Parses `relu`, `tanh`, `sigmoid` or `maxpool:<k>:<stride>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => return Ok(PointwiseKind::Relu),
            "tanh" => return Ok(PointwiseKind::Tanh),
            "sigmoid" => return Ok(PointwiseKind::Sigmoid),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        if let ["maxpool", k, stride] = parts.as_slice() {
            if let (Ok(k), Ok(stride)) = (k.parse(), stride.parse()) {
                return Ok(PointwiseKind::MaxPool { k, stride });
            }
        }
        Err(Error::invalid("pointwise_and_pool", format!("unknown kind `{s}`")))
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        batch: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
        pixels: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
        rows: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        offset: usize,
    },
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one forward/backward pass.
#[derive(Debug)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients keyed by parameter name.
    pub fn params(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<S>> {
        self.params
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Records a trainable value; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Tensor<S>) -> Var {
        self.push(value, Op::Param(name.to_string()), &[])
    }

    /// 2-D convolution of `[C_in, H, W]` or `[N, C_in, H, W]` input with
    /// `[C_out, C_in, k, k]` weights and `[C_out]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let (batch, c_in, h, wd) = match xs.as_slice() {
            [c, h, w] => (1, *c, *h, *w),
            [n, c, h, w] => (*n, *c, *h, *w),
            _ => return Err(Error::shape(OP, format!("input rank {} (want 3 or 4)", xs.len()))),
        };
        let (c_out, k) = match ws.as_slice() {
            [co, ci, kh, kw] => {
                if *ci != c_in {
                    return Err(Error::shape(
                        OP,
                        format!("input channels: input has {c_in}, weight expects {ci}"),
                    ));
                }
                if kh != kw {
                    return Err(Error::shape(OP, format!("kernel height {kh} != kernel width {kw}")));
                }
                (*co, *kh)
            }
            _ => return Err(Error::shape(OP, format!("weight rank {} (want 4)", ws.len()))),
        };
        if bs != [c_out] {
            return Err(Error::shape(OP, format!("bias shape {bs:?}, expected [{c_out}]")));
        }
        if stride == 0 {
            return Err(Error::invalid(OP, "stride must be >= 1"));
        }
        if k > h + 2 * pad {
            return Err(Error::shape(OP, format!("height: kernel {k} exceeds padded height {}", h + 2 * pad)));
        }
        if k > wd + 2 * pad {
            return Err(Error::shape(OP, format!("width: kernel {k} exceeds padded width {}", wd + 2 * pad)));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
            batch,
        );
        let shape = if xs.len() == 3 {
            vec![c_out, geom.oh, geom.ow]
        } else {
            vec![batch, c_out, geom.oh, geom.ow]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, batch }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > S::ZERO { v } else { S::ZERO });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.sigmoid());
        self.push(value, Op::Sigmoid(x), &[x])
    }

    /// Max pooling (no padding) over the last two axes of a rank-3 or rank-4
    /// tensor.
    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        const OP: &str = "max_pool";
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::shape(OP, format!("input rank {} (want 3 or 4)", xs.len())));
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        if k == 0 || stride == 0 {
            return Err(Error::invalid(OP, "window and stride must be >= 1"));
        }
        if k > h || k > w {
            return Err(Error::shape(OP, format!("window {k} exceeds spatial extent {h}x{w}")));
        }
        let planes: usize = xs[..xs.len() - 2].iter().product();
        let (out, argmax) = kernels::max_pool_forward(self.value(x).data(), planes, h, w, k, stride);
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.push((h - k) / stride + 1);
        shape.push((w - k) / stride + 1);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn pointwise_and_pool(&mut self, x: Var, kind: PointwiseKind) -> Result<Var> {
        Ok(match kind {
            PointwiseKind::Relu => self.relu(x),
            PointwiseKind::Tanh => self.tanh(x),
            PointwiseKind::Sigmoid => self.sigmoid(x),
            PointwiseKind::MaxPool { k, stride } => self.max_pool(x, k, stride)?,
        })
    }

    /// Mean over the last two axes: `[C, H, W] -> [C]`, `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("input rank {} (want 3 or 4)", xs.len()),
            ));
        }
        let pixels = xs[xs.len() - 2] * xs[xs.len() - 1];
        let inv = S::ONE / S::from_usize(pixels);
        let out: Vec<S> = self
            .value(x)
            .data()
            .chunks_exact(pixels)
            .map(|c| c.iter().copied().sum::<S>() * inv)
            .collect();
        let value = Tensor::new(xs[..xs.len() - 2].to_vec(), out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x, pixels }, &[x]))
    }

    /// `y = W x + b` for `x` of shape `[n]` or `[N, n]`, `W` of shape `[m, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "linear";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (rows, n) = match xs.as_slice() {
            [n] => (1, *n),
            [r, n] => (*r, *n),
            _ => return Err(Error::shape(OP, format!("input rank {} (want 1 or 2)", xs.len()))),
        };
        let m = match ws.as_slice() {
            [m, wn] if *wn == n => *m,
            [_, wn] => {
                return Err(Error::shape(
                    OP,
                    format!("inner dimension: input has {n}, weight expects {wn}"),
                ))
            }
            _ => return Err(Error::shape(OP, format!("weight rank {} (want 2)", ws.len()))),
        };
        if self.shape(b) != [m] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?}, expected [{m}]", self.shape(b)),
            ));
        }
        let mut out = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            out.extend_from_slice(self.value(b).data());
        }
        S::gemm(
            rows,
            n,
            m,
            S::ONE,
            self.value(x).data(),
            n as isize,
            1,
            self.value(w).data(),
            1,
            n as isize,
            S::ONE,
            &mut out,
            m as isize,
            1,
        );
        let shape = if xs.len() == 1 { vec![m] } else { vec![rows, m] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b, rows }, &[x, w, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("operands {:?} and {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        const OP: &str = "concat";
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid(OP, "no operands"))?;
        let fs = self.shape(*first).to_vec();
        if axis >= fs.len() {
            return Err(Error::invalid(OP, format!("axis {axis} for rank {}", fs.len())));
        }
        let mut total = 0;
        for &p in parts {
            let ps = self.shape(p);
            if ps.len() != fs.len()
                || ps[..axis] != fs[..axis]
                || ps[axis + 1..] != fs[axis + 1..]
            {
                return Err(Error::shape(OP, format!("operand {ps:?} incompatible with {fs:?} on axis {axis}")));
            }
            total += ps[axis];
        }
        let outer: usize = fs[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * total * fs[axis + 1..].iter().product::<usize>());
        for o in 0..outer {
            for &p in parts {
                let chunk = self.value(p).len() / outer;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = fs;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `len` consecutive entries along the leading axis starting at `start`.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if len == 0 || start + len > xs[0] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} outside leading extent {}", start + len, xs[0]),
            ));
        }
        let inner: usize = xs[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = xs;
        shape[0] = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Narrow {
                x,
                offset: start * inner,
            },
            &[x],
        ))
    }

    /// Entry `index` along the leading axis, with that axis removed.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || index >= xs[0] {
            return Err(Error::shape(
                "select",
                format!("index {index} for shape {xs:?}"),
            ));
        }
        let inner: usize = xs[1..].iter().product();
        let data = self.value(x).data()[index * inner..(index + 1) * inner].to_vec();
        let value = Tensor::new(xs[1..].to_vec(), data)?;
        Ok(self.push(
            value,
            Op::Narrow {
                x,
                offset: index * inner,
            },
            &[x],
        ))
    }

    /// `-log softmax(logits)[label]` for a `[K]` logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let ls = self.shape(logits);
        if ls.len() != 1 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits shape {ls:?}, want [K]"),
            ));
        }
        let k = ls[0];
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let z: Vec<f64> = self.value(logits).data().iter().map(|v| v.to_f64()).collect();
        let probs = softmax(&z);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(z.iter().map(|&v| libm::exp(v - max)).sum::<f64>());
        let loss = lse - z[label];
        let value = Tensor::scalar(S::from_f64(loss));
        Ok(self.push(
            value,
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must have one element, has shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), S::ONE));
        let mut params: BTreeMap<String, Tensor<S>> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    match params.get_mut(name) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            params.insert(name.clone(), g.clone());
                        }
                    }
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    batch,
                } => {
                    let need_dx = self.nodes[x.0].needs_grad;
                    let cg = kernels::conv2d_backward(
                        self.value(*x).data(),
                        self.value(*w).data(),
                        g.data(),
                        geom,
                        *batch,
                        need_dx,
                    );
                    if let Some(dx) = cg.dx {
                        self.accumulate(&mut grads, *x, dx);
                    }
                    self.accumulate(&mut grads, *w, cg.dw);
                    self.accumulate(&mut grads, *b, cg.db);
                }
                Op::Relu(x) => {
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > S::ZERO { gv } else { S::ZERO })
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Tanh(x) => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * (S::ONE - y * y))
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * y * (S::ONE - y))
                        .collect();
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![S::ZERO; self.value(*x).len()];
                        for (&src, &gv) in argmax.iter().zip(g.data()) {
                            dx[src] += gv;
                        }
                        self.accumulate(&mut grads, *x, dx);
                    }
                }
                Op::GlobalAvgPool { x, pixels } => {
                    let inv = S::ONE / S::from_usize(*pixels);
                    let mut dx = Vec::with_capacity(self.value(*x).len());
                    for &gv in g.data() {
                        dx.extend(core::iter::repeat(gv * inv).take(*pixels));
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Linear { x, w, b, rows } => {
                    let (m, n) = (self.shape(*w)[0], self.shape(*w)[1]);
                    if self.nodes[x.0].needs_grad {
                        let mut dx = vec![S::ZERO; rows * n];
                        S::gemm(
                            *rows,
                            m,
                            n,
                            S::ONE,
                            g.data(),
                            m as isize,
                            1,
                            self.value(*w).data(),
                            n as isize,
                            1,
                            S::ZERO,
                            &mut dx,
                            n as isize,
                            1,
                        );
                        self.accumulate(&mut grads, *x, dx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let mut dw = vec![S::ZERO; m * n];
                        S::gemm(
                            m,
                            *rows,
                            n,
                            S::ONE,
                            g.data(),
                            1,
                            m as isize,
                            self.value(*x).data(),
                            n as isize,
                            1,
                            S::ZERO,
                            &mut dw,
                            n as isize,
                            1,
                        );
                        self.accumulate(&mut grads, *w, dw);
                    }
                    let mut db = vec![S::ZERO; m];
                    for row in g.data().chunks_exact(m) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                    self.accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.data().to_vec());
                    self.accumulate(&mut grads, *b, g.data().to_vec());
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let da = g
                            .data()
                            .iter()
                            .zip(self.value(*b).data())
                            .map(|(&gv, &bv)| gv * bv)
                            .collect();
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let db = g
                            .data()
                            .iter()
                            .zip(self.value(*a).data())
                            .map(|(&gv, &av)| gv * av)
                            .collect();
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Sum(x) => {
                    let dx = vec![g.item(); self.value(*x).len()];
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Concat { parts, axis } => {
                    let outer: usize = node.value.shape()[..*axis].iter().product();
                    let out_chunk = node.value.len() / outer;
                    let mut offset = 0;
                    for &p in parts {
                        let chunk = self.value(p).len() / outer;
                        if self.nodes[p.0].needs_grad {
                            let mut dp = Vec::with_capacity(self.value(p).len());
                            for o in 0..outer {
                                let start = o * out_chunk + offset;
                                dp.extend_from_slice(&g.data()[start..start + chunk]);
                            }
                            self.accumulate(&mut grads, p, dp);
                        }
                        offset += chunk;
                    }
                }
                Op::Narrow { x, offset } => {
                    let len = self.value(*x).len();
                    let dst = grads[x.0].get_or_insert_with(|| Tensor::zeros(self.shape(*x)));
                    debug_assert!(offset + g.len() <= len);
                    for (d, &gv) in dst.data_mut()[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(g.data())
                    {
                        *d += gv;
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    label,
                    probs,
                } => {
                    let scale = g.item().to_f64();
                    let dx = probs
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| {
                            let t = if j == *label { 1.0 } else { 0.0 };
                            S::from_f64(scale * (p - t))
                        })
                        .collect();
                    self.accumulate(&mut grads, *logits, dx);
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], target: Var, delta: Vec<S>) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.shape(target).to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

#[cfg(test)]
mod tests;
