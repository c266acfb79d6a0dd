//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradients of every parameter and every input leaf created with
//! `requires_grad`. Graphs built with [`Graph::inference`] record nothing.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom};
use crate::params::ParamStore;
use crate::tensor::{gemm, Mat, Scalar, Tensor};

type CustomBackward<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>>>;

enum Op<F: Scalar> {
    Leaf,
    Param(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    ConvT2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    MaxPool { x: usize, argmax: Vec<u32> },
    AvgPool2(usize),
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, F),
    AddScalar(usize),
    Square(usize),
    Abs(usize),
    Pow(usize, F),
    Sum(usize),
    Mean(usize),
    MeanSpatial(usize),
    Concat(Vec<usize>),
    UpNearest(usize, usize),
    UpBilinear(usize, usize),
    Linear { x: usize, w: usize, b: Option<usize> },
    Reshape(usize),
    Blur(usize, Arc<Vec<F>>),
    ChannelAffine { x: usize, scale: usize, shift: usize },
    Custom { inputs: Vec<usize>, backward: CustomBackward<F> },
}

struct Node<F: Scalar> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
    record: bool,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, F: Scalar> {
    g: &'g Graph<F>,
    id: usize,
}

impl<F: Scalar> Clone for Var<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<F: Scalar> Copy for Var<'_, F> {}

impl<F: Scalar> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    params: HashMap<usize, Tensor<F>>,
    leaves: HashMap<usize, Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient for the parameter at `index` of the store used in the graph.
    pub fn param(&self, index: usize) -> Option<&Tensor<F>> {
        self.params.get(&index)
    }

    pub fn wrt(&self, v: Var<'_, F>) -> Option<&Tensor<F>> {
        self.leaves.get(&v.id)
    }

    pub fn params(&self) -> &HashMap<usize, Tensor<F>> {
        &self.params
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// A recording graph.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// A graph that never records backward information.
    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let grad = self.record && inputs.iter().any(|&i| nodes[i].grad);
        let op = if grad { op } else { Op::Leaf };
        nodes.push(Node { value: Arc::new(value), op, grad });
        Var { g: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Arc<Tensor<F>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].grad
    }

    /// Constant leaf.
    pub fn constant(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, Op::Leaf, &[])
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&self, t: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Arc::new(t), op: Op::Leaf, grad: self.record && requires_grad });
        Var { g: self, id: nodes.len() - 1 }
    }

    /// Leaf bound to a stored parameter.
    pub fn param(&self, store: &ParamStore<F>, name: &str) -> Result<Var<'_, F>> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        let mut nodes = self.nodes.borrow_mut();
        let grad = self.record && store.is_trainable(idx);
        nodes.push(Node { value: store.value_arc(idx), op: Op::Param(idx), grad });
        Ok(Var { g: self, id: nodes.len() - 1 })
    }

    /// Reverse pass from a single-element `root`.
    pub fn backward(&self, root: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::Shape("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Tensor::new(nodes[root.id].value.shape().to_vec(), vec![F::one()])?);
        let mut out = Gradients { params: HashMap::new(), leaves: HashMap::new() };

        for id in (0..=root.id).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.grad {
                continue;
            }
            let val = |i: usize| nodes[i].value.clone();
            let need = |i: usize| nodes[i].grad;
            let send = |grads: &mut Vec<Option<Tensor<F>>>, i: usize, g: Tensor<F>| {
                if !nodes[i].grad {
                    return;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(id, gy);
                }
                Op::Param(p) => match out.params.get_mut(p) {
                    Some(acc) => acc.add_assign(&gy),
                    None => {
                        out.params.insert(*p, gy);
                    }
                },
                Op::Conv2d { x, w, b, geom } => {
                    let r = ops::conv2d_backward(
                        &val(*x),
                        &val(*w),
                        geom,
                        &gy,
                        need(*x),
                        need(*w),
                        b.map(need).unwrap_or(false),
                    );
                    if let Some(d) = r.dx {
                        send(&mut grads, *x, d);
                    }
                    if let Some(d) = r.dw {
                        send(&mut grads, *w, d);
                    }
                    if let (Some(b), Some(d)) = (b, r.db) {
                        send(&mut grads, *b, d);
                    }
                }
                Op::ConvT2d { x, w, b, geom } => {
                    let r = ops::conv_transpose2d_backward(
                        &val(*x),
                        &val(*w),
                        geom,
                        &gy,
                        need(*x),
                        need(*w),
                        b.map(need).unwrap_or(false),
                    );
                    if let Some(d) = r.dx {
                        send(&mut grads, *x, d);
                    }
                    if let Some(d) = r.dw {
                        send(&mut grads, *w, d);
                    }
                    if let (Some(b), Some(d)) = (b, r.db) {
                        send(&mut grads, *b, d);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let xs = val(*x);
                    let mut d = Tensor::zeros(xs.shape().to_vec());
                    for (&a, &g) in argmax.iter().zip(gy.data()) {
                        d.data_mut()[a as usize] += g;
                    }
                    send(&mut grads, *x, d);
                }
                Op::AvgPool2(x) => {
                    let d = ops::avg_pool2_backward(val(*x).shape(), &gy);
                    send(&mut grads, *x, d);
                }
                Op::Relu(x) => {
                    let d = val(*x).zip_map(&gy, |v, g| if v > F::zero() { g } else { F::zero() });
                    send(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = node.value.zip_map(&gy, |y, g| g * y * (F::one() - y));
                    send(&mut grads, *x, d);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, gy.clone());
                    send(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, gy.map(|g| -g));
                    send(&mut grads, *a, gy);
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        send(&mut grads, *a, gy.zip_map(&val(*b), |g, v| g * v));
                    }
                    if need(*b) {
                        send(&mut grads, *b, gy.zip_map(&val(*a), |g, v| g * v));
                    }
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    if need(*a) {
                        send(&mut grads, *a, gy.zip_map(&bv, |g, v| g / v));
                    }
                    if need(*b) {
                        // d(a/b)/db = -y/b
                        let t = node.value.zip_map(&bv, |y, v| y / v);
                        send(&mut grads, *b, gy.zip_map(&t, |g, v| -g * v));
                    }
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    send(&mut grads, *x, gy.map(|g| g * c));
                }
                Op::AddScalar(x) => send(&mut grads, *x, gy),
                Op::Square(x) => {
                    let two = F::of(2.0);
                    send(&mut grads, *x, gy.zip_map(&val(*x), |g, v| g * two * v));
                }
                Op::Abs(x) => {
                    let d = gy.zip_map(&val(*x), |g, v| {
                        if v > F::zero() {
                            g
                        } else if v < F::zero() {
                            -g
                        } else {
                            F::zero()
                        }
                    });
                    send(&mut grads, *x, d);
                }
                Op::Pow(x, e) => {
                    let e = *e;
                    let d = gy.zip_map(&val(*x), |g, v| {
                        if v == F::zero() {
                            F::zero()
                        } else {
                            g * e * v.powf(e - F::one())
                        }
                    });
                    send(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let g = gy.data()[0];
                    send(&mut grads, *x, Tensor::full(val(*x).shape().to_vec(), g));
                }
                Op::Mean(x) => {
                    let xs = val(*x);
                    let g = gy.data()[0] / F::of(xs.numel() as f64);
                    send(&mut grads, *x, Tensor::full(xs.shape().to_vec(), g));
                }
                Op::MeanSpatial(x) => {
                    let xs = val(*x);
                    let plane = xs.shape()[2] * xs.shape()[3];
                    let inv = F::one() / F::of(plane as f64);
                    let mut d = Vec::with_capacity(xs.numel());
                    for &g in gy.data() {
                        d.extend(std::iter::repeat_n(g * inv, plane));
                    }
                    send(&mut grads, *x, Tensor::new(xs.shape().to_vec(), d)?);
                }
                Op::Concat(parts) => {
                    let n = gy.shape()[0];
                    let total: usize = gy.numel() / n;
                    let mut offset = 0;
                    for &p in parts {
                        let ps = val(p);
                        let per = ps.numel() / n;
                        if need(p) {
                            let mut d = Vec::with_capacity(ps.numel());
                            for b in 0..n {
                                d.extend_from_slice(&gy.data()[b * total + offset..b * total + offset + per]);
                            }
                            send(&mut grads, p, Tensor::new(ps.shape().to_vec(), d)?);
                        }
                        offset += per;
                    }
                }
                Op::UpNearest(x, f) => {
                    let d = ops::upsample_nearest_backward(val(*x).shape(), &gy, *f);
                    send(&mut grads, *x, d);
                }
                Op::UpBilinear(x, f) => {
                    let d = ops::upsample_bilinear_backward(val(*x).shape(), &gy, *f);
                    send(&mut grads, *x, d);
                }
                Op::Linear { x, w, b } => {
                    let (xs, ws) = (val(*x), val(*w));
                    let (n, i) = (xs.shape()[0], xs.shape()[1]);
                    let o = ws.shape()[0];
                    if need(*x) {
                        let mut d = vec![F::zero(); n * i];
                        gemm(Mat::new(gy.data(), n, o), Mat::new(ws.data(), o, i), F::zero(), &mut d, i);
                        send(&mut grads, *x, Tensor::new([n, i], d)?);
                    }
                    if need(*w) {
                        let mut d = vec![F::zero(); o * i];
                        gemm(Mat::t(gy.data(), o, n), Mat::new(xs.data(), n, i), F::zero(), &mut d, i);
                        send(&mut grads, *w, Tensor::new([o, i], d)?);
                    }
                    if let Some(b) = b {
                        if need(*b) {
                            let mut d = vec![F::zero(); o];
                            for r in 0..n {
                                for (acc, &g) in d.iter_mut().zip(&gy.data()[r * o..(r + 1) * o]) {
                                    *acc += g;
                                }
                            }
                            send(&mut grads, *b, Tensor::new([o], d)?);
                        }
                    }
                }
                Op::Reshape(x) => {
                    let shape = val(*x).shape().to_vec();
                    send(&mut grads, *x, gy.reshape(shape)?);
                }
                Op::Blur(x, k) => {
                    let d = ops::blur_valid_backward(val(*x).shape(), &gy, k);
                    send(&mut grads, *x, d);
                }
                Op::ChannelAffine { x, scale, shift } => {
                    let xs = val(*x);
                    let sc = val(*scale);
                    let (n, c, h, w) = xs.dims4()?;
                    let plane = h * w;
                    if need(*x) {
                        let mut d = gy.clone();
                        for b in 0..n {
                            for ch in 0..c {
                                let s = sc.data()[ch];
                                let o = (b * c + ch) * plane;
                                for v in &mut d.data_mut()[o..o + plane] {
                                    *v *= s;
                                }
                            }
                        }
                        send(&mut grads, *x, d);
                    }
                    if need(*scale) || need(*shift) {
                        let mut ds = vec![F::zero(); c];
                        let mut dt = vec![F::zero(); c];
                        for b in 0..n {
                            for ch in 0..c {
                                let o = (b * c + ch) * plane;
                                for (g, v) in gy.data()[o..o + plane].iter().zip(&xs.data()[o..o + plane]) {
                                    ds[ch] += *g * *v;
                                    dt[ch] += *g;
                                }
                            }
                        }
                        send(&mut grads, *scale, Tensor::new([c], ds)?);
                        send(&mut grads, *shift, Tensor::new([c], dt)?);
                    }
                }
                Op::Custom { inputs, backward } => {
                    for (i, d) in inputs.iter().zip(backward(&gy)) {
                        if let Some(d) = d {
                            send(&mut grads, *i, d);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn same_shape<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<'g, F: Scalar> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.g
    }

    pub fn value(&self) -> Arc<Tensor<F>> {
        self.g.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.g.needs(self.id)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> F {
        self.value().data()[0]
    }

    fn unary(self, value: Tensor<F>, op: Op<F>) -> Var<'g, F> {
        self.g.push(value, op, &[self.id])
    }

    fn binary(self, other: Var<'g, F>, what: &str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var<'g, F>> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, what)?;
        Ok(self.g.push(a.zip_map(&b, f), op, &[self.id, other.id]))
    }

    pub fn conv2d(
        self,
        weight: Var<'g, F>,
        bias: Option<Var<'g, F>>,
        stride: usize,
        pad: usize,
        dil: usize,
    ) -> Result<Var<'g, F>> {
        let bv = bias.map(|b| b.value());
        let (y, geom) = ops::conv2d_forward(&self.value(), &weight.value(), bv.as_deref(), stride, pad, dil)?;
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.g.push(y, Op::Conv2d { x: self.id, w: weight.id, b: bias.map(|b| b.id), geom }, &inputs))
    }

    pub fn conv_transpose2d(
        self,
        weight: Var<'g, F>,
        bias: Option<Var<'g, F>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, F>> {
        let bv = bias.map(|b| b.value());
        let (y, geom) = ops::conv_transpose2d_forward(&self.value(), &weight.value(), bv.as_deref(), stride, pad)?;
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.g.push(y, Op::ConvT2d { x: self.id, w: weight.id, b: bias.map(|b| b.id), geom }, &inputs))
    }

    pub fn max_pool(self, k: usize) -> Result<Var<'g, F>> {
        let (y, argmax) = ops::max_pool_forward(&self.value(), k)?;
        Ok(self.unary(y, Op::MaxPool { x: self.id, argmax }))
    }

    pub fn avg_pool2(self) -> Result<Var<'g, F>> {
        let y = ops::avg_pool2_forward(&self.value())?;
        Ok(self.unary(y, Op::AvgPool2(self.id)))
    }

    pub fn relu(self) -> Var<'g, F> {
        let y = self.value().map(|v| v.max(F::zero()));
        self.unary(y, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'g, F> {
        let y = self.value().map(|v| F::one() / (F::one() + (-v).exp()));
        self.unary(y, Op::Sigmoid(self.id))
    }

    pub fn add(self, o: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(o, "add", |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(o, "sub", |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(o, "mul", |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(self, o: Var<'g, F>) -> Result<Var<'g, F>> {
        self.binary(o, "div", |a, b| a / b, Op::Div(self.id, o.id))
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        let y = self.value().map(|v| v * c);
        self.unary(y, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: F) -> Var<'g, F> {
        let y = self.value().map(|v| v + c);
        self.unary(y, Op::AddScalar(self.id))
    }

    pub fn square(self) -> Var<'g, F> {
        let y = self.value().map(|v| v * v);
        self.unary(y, Op::Square(self.id))
    }

    pub fn abs(self) -> Var<'g, F> {
        let y = self.value().map(|v| v.abs());
        self.unary(y, Op::Abs(self.id))
    }

    /// Elementwise power for non-negative inputs.
    pub fn powf(self, e: F) -> Var<'g, F> {
        let y = self.value().map(|v| v.powf(e));
        self.unary(y, Op::Pow(self.id, e))
    }

    pub fn sum(self) -> Var<'g, F> {
        let y = Tensor::scalar(self.value().sum());
        self.unary(y, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'g, F> {
        let v = self.value();
        let y = Tensor::scalar(v.sum() / F::of(v.numel() as f64));
        self.unary(y, Op::Mean(self.id))
    }

    /// `(n, c, h, w) -> (n, c)` spatial mean.
    pub fn mean_spatial(self) -> Result<Var<'g, F>> {
        let v = self.value();
        let (n, c, h, w) = v.dims4()?;
        let inv = F::one() / F::of((h * w) as f64);
        let data = (0..n * c)
            .map(|p| v.data()[p * h * w..(p + 1) * h * w].iter().copied().sum::<F>() * inv)
            .collect();
        Ok(self.unary(Tensor::new([n, c], data)?, Op::MeanSpatial(self.id)))
    }

    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'g, F>> {
        let v = self.value();
        let (n, c, h, w) = v.dims4()?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let y = ops::upsample_nearest_kernel(v.data(), n * c, h, w, factor);
        Ok(self.unary(Tensor::new([n, c, h * factor, w * factor], y)?, Op::UpNearest(self.id, factor)))
    }

    pub fn upsample_bilinear(self, factor: usize) -> Result<Var<'g, F>> {
        let y = ops::upsample_bilinear_forward(&self.value(), factor)?;
        Ok(self.unary(y, Op::UpBilinear(self.id, factor)))
    }

    /// `x (n, in) -> x W^T + b` with `W (out, in)`.
    pub fn linear(self, weight: Var<'g, F>, bias: Option<Var<'g, F>>) -> Result<Var<'g, F>> {
        let (x, w) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut y = vec![F::zero(); n * o];
        gemm(Mat::new(x.data(), n, i), Mat::t(w.data(), i, o), F::zero(), &mut y, o);
        if let Some(b) = bias {
            let bv = b.value();
            if bv.numel() != o {
                return Err(Error::Shape(format!("linear bias {:?} for {o} outputs", bv.shape())));
            }
            for r in 0..n {
                for (v, &bb) in y[r * o..(r + 1) * o].iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.g.push(Tensor::new([n, o], y)?, Op::Linear { x: self.id, w: weight.id, b: bias.map(|b| b.id) }, &inputs))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, F>> {
        let y = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(y, Op::Reshape(self.id)))
    }

    /// Separable valid filtering with a 1-D kernel along both spatial axes.
    pub fn blur_valid(self, kernel: Arc<Vec<F>>) -> Result<Var<'g, F>> {
        let y = ops::blur_valid_forward(&self.value(), &kernel)?;
        Ok(self.unary(y, Op::Blur(self.id, kernel)))
    }

    /// Per-channel `x * scale[c] + shift[c]`.
    pub fn channel_affine(self, scale: Var<'g, F>, shift: Var<'g, F>) -> Result<Var<'g, F>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let (s, t) = (scale.value(), shift.value());
        if s.numel() != c || t.numel() != c {
            return Err(Error::Shape(format!("channel affine of {c} channels with {:?}/{:?}", s.shape(), t.shape())));
        }
        let plane = h * w;
        let mut y = (*x).clone();
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * plane;
                let (sv, tv) = (s.data()[ch], t.data()[ch]);
                for v in &mut y.data_mut()[o..o + plane] {
                    *v = *v * sv + tv;
                }
            }
        }
        Ok(self.g.push(y, Op::ChannelAffine { x: self.id, scale: scale.id, shift: shift.id }, &[self.id, scale.id, shift.id]))
    }

    /// Channel concatenation of rank-4 tensors.
    pub fn concat_channels(parts: &[Var<'g, F>]) -> Result<Var<'g, F>> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let g = first.g;
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (n, _, h, w) = vals[0].dims4()?;
        let mut c_total = 0;
        for v in &vals {
            let (vn, vc, vh, vw) = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Shape(format!("concat {:?} with {:?}", v.shape(), vals[0].shape())));
            }
            c_total += vc;
        }
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for b in 0..n {
            for v in &vals {
                data.extend_from_slice(v.outer(b));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(g.push(Tensor::new([n, c_total, h, w], data)?, Op::Concat(ids.clone()), &ids))
    }

    /// Operation with a caller-supplied vector-Jacobian product. `backward`
    /// receives the output gradient and returns one optional gradient per
    /// input, in order.
    pub fn custom(
        inputs: &[Var<'g, F>],
        value: Tensor<F>,
        backward: impl Fn(&Tensor<F>) -> Vec<Option<Tensor<F>>> + 'static,
    ) -> Var<'g, F> {
        let g = inputs[0].g;
        let ids: Vec<usize> = inputs.iter().map(|p| p.id).collect();
        g.push(value, Op::Custom { inputs: ids.clone(), backward: Box::new(backward) }, &ids)
    }
}
