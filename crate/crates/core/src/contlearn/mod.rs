//! Continual-learning protocol: one classifier head per task over a shared
//! routed network, residue-sparsity loss, residue-scaled updates, and the
//! re-encoding evaluation of earlier tasks.

mod checkpoint;
mod metrics;
mod protocol;
mod train;
mod vc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataError;
use crate::hrncore::{HrnError, RouteTrace};
use crate::ndcompute::{forward_dense_head, DenseSpec, NdError, ParamSet};
use crate::seeding::rng_for;

pub use checkpoint::{load_model, save_model, Model};
pub use metrics::{EpochLog, RunMetrics, TaskSummary};
pub use protocol::{evaluate, run_protocol, run_scenario, vc_baseline, Learner, ScenarioOutcome};
pub use train::{train_step, unit_scales, StepReport};
pub use vc::VcModel;

#[derive(Debug, Error)]
pub enum ContError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Hrn(#[from] HrnError),
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One task of a sequence. Labels inside its datasets are positions in
/// `class_labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Original dataset labels, in head-output order.
    pub class_labels: Vec<u32>,
    pub epochs: usize,
    /// Hidden widths of the head.
    pub head_spec: Vec<usize>,
    pub units_to_add_before: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self { task_id: 0, class_labels: Vec::new(), epochs: 1, head_spec: vec![64], units_to_add_before: 0 }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ContError> {
        if self.class_labels.is_empty() {
            return Err(ContError::InvalidArgument(format!("task {} has no classes", self.task_id)));
        }
        if self.epochs == 0 {
            return Err(ContError::InvalidArgument(format!("task {} needs at least one epoch", self.task_id)));
        }
        Ok(())
    }
}

/// Switches mirroring the ablation rows: no residue-scaled updates, no
/// residue penalty, no aging-based basis updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_grad_regularization: bool,
    pub lambda_zero: bool,
    pub no_basis_update: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 3] = ["no_grad_regularization", "lambda_zero", "no_basis_update"];

    pub fn enable(&mut self, name: &str) -> Result<(), ContError> {
        match name.replace('-', "_").as_str() {
            "no_grad_regularization" => self.no_grad_regularization = true,
            "lambda_zero" => self.lambda_zero = true,
            "no_basis_update" => self.no_basis_update = true,
            _ => {
                return Err(ContError::InvalidArgument(format!(
                    "unknown ablation {name:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Enabled switches, in declaration order.
    pub fn active(&self) -> Vec<&'static str> {
        let flags = [self.no_grad_regularization, self.lambda_zero, self.no_basis_update];
        Self::NAMES.iter().zip(flags).filter(|(_, on)| *on).map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub ablations: Ablations,
    /// Drives head initialization, batch order and random unit picks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 16, ablations: Ablations::default(), seed: 0 }
    }
}

/// Per-task classifier: dense layers on the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub task_id: usize,
    /// Original dataset labels, in output order.
    pub class_labels: Vec<u32>,
    pub spec: DenseSpec,
    pub params: ParamSet,
}

impl Head {
    pub const GROUP: &'static str = "head";

    pub fn new(task_id: usize, input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self, ContError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let spec = DenseSpec::new(sizes)?;
        let params = spec.init_params(&mut rng_for(seed, &format!("head.{task_id}")), Self::GROUP);
        Ok(Self { task_id, class_labels: (0..classes as u32).collect(), spec, params })
    }

    pub fn num_classes(&self) -> usize {
        self.spec.output_len()
    }

    pub fn logits(&self, features: &[f32]) -> Result<Vec<f32>, ContError> {
        Ok(forward_dense_head(&self.spec, &self.params, features)?)
    }

    pub fn predict(&self, features: &[f32]) -> Result<usize, ContError> {
        Ok(argmax(&self.logits(features)?))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one sample, in f64.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<f64, ContError> {
    if label >= logits.len() {
        return Err(ContError::InvalidArgument(format!("label {label} out of range for {} logits", logits.len())));
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b as f64));
    let lse = m + logits.iter().map(|v| (*v as f64 - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label] as f64)
}

/// Cross-entropy plus `lambda * sum_j ||r_j||_1` over the route's residues.
pub fn task_loss(logits: &[f32], label: usize, trace: &RouteTrace, lambda: f64) -> Result<f64, ContError> {
    if !(lambda >= 0.0) {
        return Err(ContError::InvalidArgument(format!("sparsity weight must be non-negative, got {lambda}")));
    }
    Ok(cross_entropy(logits, label)? + lambda * trace.residue_l1())
}
