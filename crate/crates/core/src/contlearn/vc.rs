use std::collections::HashMap;

use crate::hrncore::{adapt_channels, NetworkConfig};
use crate::ndcompute::{sgd_step, ConvStackSpec, ParamSet, Tape, Tensor, Var};
use crate::seeding::{derive_seed, rng_for};

use super::{argmax, ContError, Head, StepReport};

/// Vanilla convolutional baseline: a fixed chain of conv stacks whose
/// flattened output feeds the task heads; fine-tuned on every task.
#[derive(Debug, Clone, PartialEq)]
pub struct VcModel {
    pub conv: ConvStackSpec,
    pub stages: Vec<ParamSet>,
    /// `[C, H, W]` of the input samples.
    pub input_shape: [usize; 3],
    pub learning_rate: f64,
}

impl VcModel {
    /// Chains `depth - 1` stacks, the longest unit combination of the routed
    /// network. `input_shape` is the raw sample shape.
    pub fn new(config: &NetworkConfig, conv: ConvStackSpec, input_shape: [usize; 3], seed: u64) -> Result<Self, ContError> {
        conv.validate()?;
        if conv.in_channels() != conv.out_channels() {
            return Err(ContError::InvalidArgument("baseline conv stacks must preserve channels".into()));
        }
        let n = config.depth - 1;
        let stages = (0..n)
            .map(|i| {
                let g = format!("vc.{i}");
                conv.init_params(&mut rng_for(derive_seed(seed, "init"), &g), &g)
            })
            .collect();
        let vc = Self { conv, stages, input_shape, learning_rate: config.learning_rate };
        vc.output_shape()?;
        Ok(vc)
    }

    fn output_shape(&self) -> Result<[usize; 3], ContError> {
        let mut shape = [self.conv.in_channels(), self.input_shape[1], self.input_shape[2]];
        for _ in &self.stages {
            shape = self.conv.output_shape(shape).ok_or_else(|| {
                ContError::InvalidArgument(format!("baseline conv chain does not fit {:?} inputs", self.input_shape))
            })?;
        }
        Ok(shape)
    }

    pub fn feature_dim(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    /// Returns the feature variable and the bound stage parameters.
    fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<(Var, Vec<Vec<Var>>), ContError> {
        let mut y = tape.input(adapt_channels(x, self.conv.in_channels())?);
        let mut bound = Vec::with_capacity(self.stages.len());
        for p in &self.stages {
            let vars = p.bind(tape);
            y = self.conv.forward(tape, &vars, y)?;
            bound.push(vars);
        }
        Ok((y, bound))
    }

    pub fn encode(&self, x: &Tensor) -> Result<Vec<f32>, ContError> {
        let mut tape = Tape::new();
        let (y, _) = self.forward(&mut tape, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn train_step(&mut self, head: &mut Head, batch: &[(Tensor, usize)]) -> Result<StepReport, ContError> {
        if batch.is_empty() {
            return Err(ContError::EmptyBatch);
        }
        self.stages.iter_mut().for_each(ParamSet::zero_grad);
        head.params.zero_grad();
        let weight = 1.0 / batch.len() as f32;
        let mut report = StepReport { samples: batch.len(), ..Default::default() };
        for (x, label) in batch {
            let mut tape = Tape::new();
            let (h, bound) = self.forward(&mut tape, x)?;
            let head_vars = head.params.bind(&mut tape);
            let logits = head.spec.forward(&mut tape, &head_vars, h)?;
            let ce = tape.softmax_cross_entropy(logits, *label)?;
            tape.backward(ce)?;
            for (p, vars) in self.stages.iter_mut().zip(&bound) {
                p.accumulate_grads(&tape, vars, weight);
            }
            head.params.accumulate_grads(&tape, &head_vars, weight);
            let v = tape.value(ce).data()[0] as f64;
            report.loss += v;
            report.task_loss += v;
            if argmax(tape.value(logits).data()) == *label {
                report.correct += 1;
            }
        }
        report.loss /= batch.len() as f64;
        report.task_loss /= batch.len() as f64;
        let lr = self.learning_rate as f32;
        for p in &mut self.stages {
            sgd_step(p, lr, &HashMap::new())?;
        }
        sgd_step(&mut head.params, lr, &HashMap::new())?;
        Ok(report)
    }
}
