//! Reverse-mode differentiation over a recorded list of operations.
//!
//! A [`Tape`] is built by one forward pass and consumed by one backward pass.
//! Nodes hold their forward values; [`Tape::backward`] walks them in reverse
//! and leaves gradients on every node that requires one.

use crate::feathash::{HashError, HashSpec};

use super::conv::{self, ConvGeom};
use super::{NdError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    Relu(Var),
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Linear { input: Var, weight: Var, bias: Var },
    /// `h = phi(y) / ||phi(y)||_2`, with `norm` the denominator.
    HashNormalize { input: Var, spec: HashSpec, norm: f32 },
    /// `r = h - V^T V h` for the orthonormal rows of `basis`.
    Residue { input: Var, basis: Vec<Vec<f32>> },
    Add(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    L1(Var),
    SoftmaxCrossEntropy { logits: Var, target: usize, probs: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node, NdError> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| NdError::State(format!("variable {} is not on this tape", v.0)))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Convolution of a `[C, H, W]` map with weights `[O, C, K, K]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NdError> {
        let g = self.conv_geom(input, weight, bias, stride, padding)?;
        let out = conv::conv2d_forward(
            &g,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![g.out_c, g.out_h(), g.out_w()], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, stride, padding }, rg))
    }

    fn conv_geom(
        &self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<ConvGeom, NdError> {
        let (is, ws, bs) = (
            self.node(input)?.value.shape(),
            self.node(weight)?.value.shape(),
            self.node(bias)?.value.shape(),
        );
        if is.len() != 3 || ws.len() != 4 || ws[2] != ws[3] || bs != [ws[0]] || ws[1] != is[0] {
            return Err(NdError::Shape(format!(
                "conv2d: input {is:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        if stride == 0 || is[1] + 2 * padding < ws[2] || is[2] + 2 * padding < ws[2] {
            return Err(NdError::Shape(format!(
                "conv2d: kernel {} does not fit input {is:?} with padding {padding}",
                ws[2]
            )));
        }
        Ok(ConvGeom {
            in_c: is[0],
            in_h: is[1],
            in_w: is[2],
            out_c: ws[0],
            k: ws[2],
            stride,
            pad: padding,
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|e| e.max(0.0)).collect(),
        )
        .expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var, NdError> {
        let s = self.node(x)?.value.shape().to_vec();
        if s.len() != 3 || s[1] < 2 || s[2] < 2 {
            return Err(NdError::Shape(format!("maxpool2 needs [C, H>=2, W>=2], got {s:?}")));
        }
        let (out, argmax) = conv::maxpool2_forward(s[0], s[1], s[2], self.value(x).data());
        let value = Tensor::new(vec![s[0], s[1] / 2, s[2] / 2], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool2 { input: x, argmax }, rg))
    }

    /// Dense layer on a flattened input; weight is `[out, in]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, NdError> {
        let n_in = self.node(input)?.value.len();
        let ws = self.node(weight)?.value.shape();
        let bs = self.node(bias)?.value.shape();
        if ws.len() != 2 || ws[1] != n_in || bs != [ws[0]] {
            return Err(NdError::Shape(format!(
                "linear: input length {n_in}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let out = conv::linear_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Tensor::from_vec(out), Op::Linear { input, weight, bias }, rg))
    }

    /// Normalized feature hash of a flattened feature map.
    ///
    /// The forward value follows the infinity-norm-then-2-norm recipe of
    /// [`HashSpec::hash_normalized`]. Since hashing is linear, the positive
    /// infinity-norm factor cancels, so the backward pass differentiates
    /// `phi(y) / ||phi(y)||_2`.
    pub fn hash_normalize(&mut self, input: Var, spec: HashSpec) -> Result<Var, HashError> {
        let y = self
            .node(input)
            .map_err(|e| HashError::InvalidArgument(e.to_string()))?
            .value
            .data();
        let h = spec.hash_normalized(y)?;
        let raw = spec.hash(y)?;
        let norm = raw.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() as f32;
        let rg = self.rg(input);
        Ok(self.push(Tensor::from_vec(h.values), Op::HashNormalize { input, spec, norm }, rg))
    }

    /// Residue of `h` after removing its projection on an orthonormal basis.
    pub fn residue(&mut self, h: Var, basis: Vec<Vec<f32>>) -> Result<Var, NdError> {
        let hv = self.node(h)?.value.data();
        if basis.iter().any(|b| b.len() != hv.len()) {
            return Err(NdError::Shape("residue: basis and hash dimensions differ".into()));
        }
        let r = remove_projection(hv, &basis);
        let rg = self.rg(h);
        Ok(self.push(Tensor::from_vec(r), Op::Residue { input: h, basis }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if av.shape() != bv.shape() {
            return Err(NdError::Shape(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let out: Vec<f32> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|e| e * c).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| *v as f64).sum::<f64>() as f32;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `||x||_1` as a scalar.
    pub fn l1(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.abs() as f64).sum::<f64>() as f32;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::L1(x), rg)
    }

    /// Softmax cross-entropy of one logit vector against a class index.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NdError> {
        let l = self.node(logits)?.value.data();
        if target >= l.len() {
            return Err(NdError::Shape(format!(
                "target class {target} out of range for {} logits",
                l.len()
            )));
        }
        let probs = softmax(l);
        let loss = -(probs[target].max(f32::MIN_POSITIVE) as f64).ln() as f32;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, target, probs }, rg))
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NdError> {
        if self.nodes.is_empty() {
            return Err(NdError::State("backward called before any forward pass".into()));
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(NdError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        // Only keep gradients that were asked for.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), NdError> {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let geom = self.conv_geom(*input, *weight, *bias, *stride, *padding)?;
                let (gi, gw, gb) = conv::conv2d_backward(
                    &geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gd,
                    self.rg(*input),
                );
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, &gi);
                }
                self.accumulate(grads, *weight, &gw);
                self.accumulate(grads, *bias, &gb);
            }
            Op::Relu(x) => {
                let gx: Vec<f32> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gx = vec![0.0f32; self.value(*input).len()];
                for (g, &a) in gd.iter().zip(argmax) {
                    gx[a as usize] += g;
                }
                self.accumulate(grads, *input, &gx);
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let n_in = x.len();
                if self.rg(*weight) {
                    let mut gw = vec![0.0f32; w.len()];
                    for (o, go) in gd.iter().enumerate() {
                        for (d, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *d = go * xi;
                        }
                    }
                    self.accumulate(grads, *weight, &gw);
                }
                self.accumulate(grads, *bias, gd);
                if self.rg(*input) {
                    let mut gx = vec![0.0f32; n_in];
                    for (o, go) in gd.iter().enumerate() {
                        for (d, wi) in gx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *d += go * wi;
                        }
                    }
                    self.accumulate(grads, *input, &gx);
                }
            }
            Op::HashNormalize { input, spec, norm } => {
                let h = self.nodes[idx].value.data();
                let gh: f32 = h.iter().zip(gd).map(|(a, b)| a * b).sum();
                let gu: Vec<f32> = gd.iter().zip(h).map(|(g, hv)| (g - gh * hv) / norm).collect();
                let n = self.value(*input).len();
                self.accumulate(grads, *input, &spec.hash_transpose(&gu, n));
            }
            Op::Residue { input, basis } => {
                // (I - V^T V) is symmetric.
                self.accumulate(grads, *input, &remove_projection(gd, basis));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd);
                self.accumulate(grads, *b, gd);
            }
            Op::Scale(x, c) => {
                let gx: Vec<f32> = gd.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::Sum(x) => {
                let gx = vec![gd[0]; self.value(*x).len()];
                self.accumulate(grads, *x, &gx);
            }
            Op::L1(x) => {
                let gx: Vec<f32> = self
                    .value(*x)
                    .data()
                    .iter()
                    .map(|v| {
                        if *v > 0.0 {
                            gd[0]
                        } else if *v < 0.0 {
                            -gd[0]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *x, &gx);
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                let mut gx: Vec<f32> = probs.iter().map(|p| p * gd[0]).collect();
                gx[*target] -= gd[0];
                self.accumulate(grads, *logits, &gx);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f32]) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, g.to_vec()).expect("gradient shape"));
            }
        }
    }
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
    let exps: Vec<f64> = logits.iter().map(|v| ((v - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// `x - sum_j (v_j . x) v_j`, accumulated in double precision.
pub(crate) fn remove_projection(x: &[f32], basis: &[Vec<f32>]) -> Vec<f32> {
    let mut out: Vec<f64> = x.iter().map(|v| *v as f64).collect();
    for v in basis {
        let c: f64 = v.iter().zip(x).map(|(a, b)| *a as f64 * *b as f64).sum();
        for (o, e) in out.iter_mut().zip(v) {
            *o -= c * *e as f64;
        }
    }
    out.into_iter().map(|v| v as f32).collect()
}
