use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::{NdError, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    /// Update group used by [`sgd_step`] scaling.
    pub group: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters with matching gradient slots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        let name = name.into();
        let group = group.into();
        match self.params.iter_mut().find(|p| p.name == name) {
            Some(p) => *p = Param { name, group, value, grad },
            None => self.params.push(Param { name, group, value, grad }),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    /// Registers every parameter as a trainable leaf, in insertion order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Adds `weight * grad` from the tape for each bound variable.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var], weight: f32) {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(*v) {
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(a, b)| *a += weight * b);
            }
        }
    }

    /// FNV-1a over names, shapes and raw value bits.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            for d in p.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Plain SGD: `w <- w - lr * scale(group) * grad`. Groups absent from
/// `per_group_scale` use scale 1.
pub fn sgd_step(
    params: &mut ParamSet,
    learning_rate: f32,
    per_group_scale: &HashMap<String, f32>,
) -> Result<(), NdError> {
    if !(learning_rate >= 0.0) {
        return Err(NdError::InvalidArgument(format!(
            "learning rate must be non-negative, got {learning_rate}"
        )));
    }
    if let Some((g, s)) = per_group_scale.iter().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
        return Err(NdError::InvalidArgument(format!("scale {s} for group {g} outside [0, 1]")));
    }
    for p in params.iter_mut() {
        let scale = per_group_scale.get(&p.group).copied().unwrap_or(1.0);
        let step = learning_rate * scale;
        if step == 0.0 {
            continue;
        }
        for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *w -= step * g;
        }
    }
    Ok(())
}

/// One convolution layer; pooling is 2x2 max, nonlinearity is a rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub pool: bool,
    #[serde(default = "yes")]
    pub relu: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStackSpec {
    pub layers: Vec<ConvLayerSpec>,
}

impl ConvStackSpec {
    /// Single 3x3 same-padded layer with rectifier and pooling.
    pub fn single(channels: usize) -> Self {
        Self {
            layers: vec![ConvLayerSpec {
                in_channels: channels,
                out_channels: channels,
                kernel_size: 3,
                stride: 1,
                padding: 1,
                pool: true,
                relu: true,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), NdError> {
        if self.layers.is_empty() {
            return Err(NdError::InvalidArgument("conv stack has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels == 0 || l.out_channels == 0 || l.kernel_size == 0 || l.stride == 0 {
                return Err(NdError::InvalidArgument(format!("layer {i}: zero-sized dimension")));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].out_channels != w[1].in_channels {
                return Err(NdError::InvalidArgument(format!(
                    "layer {} outputs {} channels but layer {} expects {}",
                    i,
                    w[0].out_channels,
                    i + 1,
                    w[1].in_channels
                )));
            }
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    /// Output `[C, H, W]` for an input map, or `None` if some layer does not fit.
    pub fn output_shape(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let [mut c, mut h, mut w] = input;
        for l in &self.layers {
            if c != l.in_channels || h + 2 * l.padding < l.kernel_size || w + 2 * l.padding < l.kernel_size {
                return None;
            }
            c = l.out_channels;
            h = (h + 2 * l.padding - l.kernel_size) / l.stride + 1;
            w = (w + 2 * l.padding - l.kernel_size) / l.stride + 1;
            if l.pool {
                if h < 2 || w < 2 {
                    return None;
                }
                h /= 2;
                w /= 2;
            }
        }
        Some([c, h, w])
    }

    /// Fan-in scaled uniform weights, zero biases. Parameters are named
    /// `conv{i}.weight` / `conv{i}.bias`.
    pub fn init_params<R: Rng>(&self, rng: &mut R, group: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            let fan_in = l.in_channels * l.kernel_size * l.kernel_size;
            let shape = [l.out_channels, l.in_channels, l.kernel_size, l.kernel_size];
            ps.insert(format!("conv{i}.weight"), group, uniform(rng, &shape, fan_in));
            ps.insert(format!("conv{i}.bias"), group, Tensor::zeros(&[l.out_channels]));
        }
        ps
    }

    /// Records the stack on `tape`; `vars` comes from [`ParamSet::bind`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var, NdError> {
        if vars.len() != 2 * self.layers.len() {
            return Err(NdError::Shape(format!(
                "conv stack has {} layers but {} parameter tensors were bound",
                self.layers.len(),
                vars.len()
            )));
        }
        let mut x = input;
        for (i, l) in self.layers.iter().enumerate() {
            let c = tape.value(x).shape().first().copied().unwrap_or(0);
            if c != l.in_channels {
                return Err(NdError::Shape(format!(
                    "layer {i} expects {} channels, got {c}",
                    l.in_channels
                )));
            }
            x = tape.conv2d(x, vars[2 * i], vars[2 * i + 1], l.stride, l.padding)?;
            if l.relu {
                x = tape.relu(x);
            }
            if l.pool {
                x = tape.maxpool2(x)?;
            }
        }
        Ok(x)
    }
}

/// Dense classifier head: a list of layer widths `[in, hidden.., out]`,
/// rectifier between layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub sizes: Vec<usize>,
}

impl DenseSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self, NdError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NdError::InvalidArgument(format!("bad dense layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R, group: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        for (i, w) in self.sizes.windows(2).enumerate() {
            ps.insert(format!("dense{i}.weight"), group, uniform(rng, &[w[1], w[0]], w[0]));
            ps.insert(format!("dense{i}.bias"), group, Tensor::zeros(&[w[1]]));
        }
        ps
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var, NdError> {
        let layers = self.sizes.len() - 1;
        if vars.len() != 2 * layers {
            return Err(NdError::Shape(format!(
                "dense head has {layers} layers but {} parameter tensors were bound",
                vars.len()
            )));
        }
        let mut x = input;
        for i in 0..layers {
            x = tape.linear(x, vars[2 * i], vars[2 * i + 1])?;
            if i + 1 < layers {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
    t
}

/// Evaluates a conv stack outside of training.
pub fn forward_conv_stack(spec: &ConvStackSpec, params: &ParamSet, input: &Tensor) -> Result<Tensor, NdError> {
    spec.validate()?;
    let mut tape = Tape::new();
    let vars = params_in_order(params, spec.layers.len(), "conv", &mut tape)?;
    let x = tape.input(input.clone());
    let y = spec.forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}

/// Evaluates a dense head outside of training.
pub fn forward_dense_head(spec: &DenseSpec, params: &ParamSet, input: &[f32]) -> Result<Vec<f32>, NdError> {
    if input.len() != spec.input_len() {
        return Err(NdError::Shape(format!(
            "head expects {} inputs, got {}",
            spec.input_len(),
            input.len()
        )));
    }
    let mut tape = Tape::new();
    let vars = params_in_order(params, spec.sizes.len() - 1, "dense", &mut tape)?;
    let x = tape.input(Tensor::from_vec(input.to_vec()));
    let y = spec.forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).data().to_vec())
}

fn params_in_order(params: &ParamSet, layers: usize, prefix: &str, tape: &mut Tape) -> Result<Vec<Var>, NdError> {
    let mut vars = Vec::with_capacity(2 * layers);
    for i in 0..layers {
        for kind in ["weight", "bias"] {
            let name = format!("{prefix}{i}.{kind}");
            let p = params
                .get(&name)
                .ok_or_else(|| NdError::Shape(format!("missing parameter {name}")))?;
            vars.push(tape.input(p.value.clone()));
        }
    }
    Ok(vars)
}
