//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order for the backward sweep.

use super::kernels;
use super::{pairwise_sum, Padding, Shape, Tensor};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BroadcastTo(Var),
    Scale(Var, f32),
    LeakyRelu(Var, f32),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    ConcatChannels(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        padding: Padding,
        stride: usize,
    },
    UpsampleBlur(Var, Padding),
    Blur(Var, Padding),
    AvgPool(Var),
    ResizeBilinear(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    /// Reductions keep their f64 result so finite-difference checks are not
    /// limited by the f32 rounding of the stored scalar.
    wide: Option<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Output shape of a 4-D broadcast, each axis equal or 1.
fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for k in 0..4 {
        out[k] = match (a[k], b[k]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return invalid(format!("shapes {a:?} and {b:?} do not broadcast")),
        };
    }
    Ok(out)
}

fn strides_for(shape: Shape, out: Shape) -> [usize; 4] {
    let full = [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ];
    let mut s = [0; 4];
    for k in 0..4 {
        s[k] = if shape[k] == 1 && out[k] != 1 { 0 } else { full[k] };
    }
    s
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out_shape, data);
    }
    let sa = strides_for(a.shape(), out_shape);
    let sb = strides_for(b.shape(), out_shape);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    let (ad, bd) = (a.data(), b.data());
    for n in 0..out_shape[0] {
        for c in 0..out_shape[1] {
            for h in 0..out_shape[2] {
                let ab = n * sa[0] + c * sa[1] + h * sa[2];
                let bb = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out_shape[3] {
                    data.push(f(ad[ab + w * sa[3]], bd[bb + w * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `g` down to `shape` over broadcast axes.
fn reduce_to(g: &Tensor, shape: Shape) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let gs = g.shape();
    let st = strides_for(shape, gs);
    let mut out = Tensor::zeros(shape);
    let od = out.data_mut();
    let gd = g.data();
    let mut idx = 0;
    for n in 0..gs[0] {
        for c in 0..gs[1] {
            for h in 0..gs[2] {
                let base = n * st[0] + c * st[1] + h * st[2];
                for w in 0..gs[3] {
                    od[base + w * st[3]] += gd[idx];
                    idx += 1;
                }
            }
        }
    }
    out
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_full(value, op, requires_grad, None)
    }

    fn push_full(&mut self, value: Tensor, op: Op, requires_grad: bool, wide: Option<f64>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            wide,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input: gradients are collected for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_full(t, Op::Leaf, true, None)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_full(t, Op::Leaf, false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value with the extra precision kept by reductions.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        n.wide.unwrap_or(n.value.item() as f64)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Fail on the first NaN/Inf anywhere in the recorded graph.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            n.value.check_finite(&format!("tape node {i} ({:?})", op_name(&n.op)))?;
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let xs = self.shape(x);
        if broadcast_shape(xs, shape)? != shape {
            return invalid(format!("cannot broadcast {xs:?} to {shape:?}"));
        }
        let v = broadcast_zip(self.value(x), &Tensor::zeros(shape), |a, _| a)?;
        Ok(self.push(v, Op::BroadcastTo(x), &[x]))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push_full(Tensor::scalar(s as f32), Op::Sum(x), rg, Some(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.nodes[x.0].requires_grad;
        self.push_full(Tensor::scalar(m as f32), Op::Mean(x), rg, Some(m))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return invalid(format!("mse: shapes {:?} and {:?} differ", ta.shape(), tb.shape()));
        }
        let sq: Vec<f32> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .collect();
        let m = pairwise_sum(&sq) / sq.len() as f64;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push_full(Tensor::scalar(m as f32), Op::Mse(a, b), rg, Some(m)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return invalid(format!("concat: shapes {sa:?} and {sb:?} differ outside channels"));
        }
        let [n, ca, h, w] = sa;
        let cb = sb[1];
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..n {
            data.extend_from_slice(&da[i * ca * h * w..(i + 1) * ca * h * w]);
            data.extend_from_slice(&db[i * cb * h * w..(i + 1) * cb * h * w]);
        }
        let v = Tensor::new([n, ca + cb, h, w], data)?;
        Ok(self.push(v, Op::ConcatChannels(a, b), &[a, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: Padding, stride: usize) -> Result<Var> {
        let bias = match b {
            Some(bv) => {
                let bt = self.value(bv);
                if bt.len() != self.shape(w)[0] {
                    return invalid(format!(
                        "conv2d: bias has {} entries for {} outputs",
                        bt.len(),
                        self.shape(w)[0]
                    ));
                }
                Some(bt.data())
            }
            None => None,
        };
        let v = kernels::conv2d_forward(self.value(x), self.value(w), bias, padding, stride)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            v,
            Op::Conv2d {
                x,
                w,
                b,
                padding,
                stride,
            },
            &inputs,
        ))
    }

    pub fn upsample2x_blur(&mut self, x: Var, padding: Padding) -> Var {
        let v = kernels::blur3(&kernels::upsample_nearest2x(self.value(x)), padding);
        self.push(v, Op::UpsampleBlur(x, padding), &[x])
    }

    pub fn blur(&mut self, x: Var, padding: Padding) -> Var {
        let v = kernels::blur3(self.value(x), padding);
        self.push(v, Op::Blur(x, padding), &[x])
    }

    pub fn avg_pool2x(&mut self, x: Var) -> Result<Var> {
        let v = kernels::avg_pool2x(self.value(x))?;
        Ok(self.push(v, Op::AvgPool(x), &[x]))
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if h == 0 || w == 0 {
            return invalid("resize target must be non-empty");
        }
        let v = kernels::resize_bilinear(self.value(x), h, w);
        Ok(self.push(v, Op::ResizeBilinear(x), &[x]))
    }

    /// Populate gradients of d(loss)/d(node) for every node that needs them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let s = self.shape(loss);
        if s != [1, 1, 1, 1] {
            return invalid(format!("backward needs a scalar loss, got shape {s:?}"));
        }
        self.backward_with(loss, Tensor::scalar(1.0))
    }

    /// Backward sweep seeded with an explicit upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<()> {
        if seed.shape() != self.shape(out) {
            return invalid("seed gradient shape must match the output");
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[out.0].grad = Some(seed);
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            let contributions = self.local_grads(&op, &g)?;
            self.nodes[idx].grad = Some(g);
            for (var, cg) in contributions {
                if self.nodes[var.0].requires_grad {
                    accumulate(&mut self.nodes[var.0].grad, cg);
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, op: &Op, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    out.push((a, reduce_to(g, self.shape(a))));
                }
                if self.needs(b) {
                    out.push((b, reduce_to(g, self.shape(b))));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    out.push((a, reduce_to(g, self.shape(a))));
                }
                if self.needs(b) {
                    out.push((b, reduce_to(&g.map(|v| -v), self.shape(b))));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let ga = broadcast_zip(g, self.value(b), |x, y| x * y)?;
                    out.push((a, reduce_to(&ga, self.shape(a))));
                }
                if self.needs(b) {
                    let gb = broadcast_zip(g, self.value(a), |x, y| x * y)?;
                    out.push((b, reduce_to(&gb, self.shape(b))));
                }
            }
            Op::BroadcastTo(x) => out.push((x, reduce_to(g, self.shape(x)))),
            Op::Scale(x, s) => out.push((x, g.map(|v| v * s))),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gv, &a)| if a > 0.0 { gv } else { slope * gv })
                    .collect();
                out.push((x, Tensor::new(xv.shape(), data)?));
            }
            Op::Sum(x) => out.push((x, Tensor::full(self.shape(x), g.item()))),
            Op::Mean(x) => {
                let n = self.value(x).len() as f32;
                out.push((x, Tensor::full(self.shape(x), g.item() / n)));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let k = 2.0 * g.item() / ta.len() as f32;
                let diff: Vec<f32> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| k * (x - y))
                    .collect();
                let ga = Tensor::new(ta.shape(), diff)?;
                if self.needs(b) {
                    out.push((b, ga.map(|v| -v)));
                }
                if self.needs(a) {
                    out.push((a, ga));
                }
            }
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = self.shape(a);
                let cb = self.shape(b)[1];
                let gd = g.data();
                let (sa, sb) = (ca * h * w, cb * h * w);
                if self.needs(a) {
                    let mut d = Vec::with_capacity(n * sa);
                    for i in 0..n {
                        d.extend_from_slice(&gd[i * (sa + sb)..i * (sa + sb) + sa]);
                    }
                    out.push((a, Tensor::new([n, ca, h, w], d)?));
                }
                if self.needs(b) {
                    let mut d = Vec::with_capacity(n * sb);
                    for i in 0..n {
                        d.extend_from_slice(&gd[i * (sa + sb) + sa..(i + 1) * (sa + sb)]);
                    }
                    out.push((b, Tensor::new([n, cb, h, w], d)?));
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                padding,
                stride,
            } => {
                let need_b = b.is_some_and(|bv| self.needs(bv));
                let grads = kernels::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    g,
                    padding,
                    stride,
                    (self.needs(x), self.needs(w), need_b),
                )?;
                if let Some(gx) = grads.x {
                    out.push((x, gx));
                }
                if let Some(gw) = grads.weight {
                    out.push((w, gw));
                }
                if let (Some(bv), Some(gb)) = (b, grads.bias) {
                    out.push((bv, gb.reshape(self.shape(bv))?));
                }
            }
            Op::UpsampleBlur(x, padding) => {
                out.push((x, kernels::sum_pool2x(&kernels::blur3(g, padding))));
            }
            Op::Blur(x, padding) => out.push((x, kernels::blur3(g, padding))),
            Op::AvgPool(x) => out.push((x, kernels::avg_pool2x_backward(g))),
            Op::ResizeBilinear(x) => {
                let [_, _, h, w] = self.shape(x);
                out.push((x, kernels::resize_bilinear_backward(g, h, w)));
            }
        }
        Ok(out)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::BroadcastTo(..) => "broadcast",
        Op::Scale(..) => "scale",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::Mse(..) => "mse",
        Op::ConcatChannels(..) => "concat",
        Op::Conv2d { .. } => "conv2d",
        Op::UpsampleBlur(..) => "upsample2x_blur",
        Op::Blur(..) => "blur",
        Op::AvgPool(..) => "avg_pool2x",
        Op::ResizeBilinear(..) => "resize_bilinear",
    }
}
