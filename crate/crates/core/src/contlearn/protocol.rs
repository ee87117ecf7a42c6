use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{LabeledDataset, Task};
use crate::hrncore::{Network, NetworkConfig, TraceRecord, UsageRatios};
use crate::ndcompute::{ConvStackSpec, Tensor};
use crate::seeding::{derive_seed, rng_for};

use super::{ContError, EpochLog, Head, RunMetrics, StepReport, TaskSpec, TrainConfig, VcModel};

/// A feature extractor the protocol can train and re-encode with.
pub trait Learner {
    /// `hrn` or `vc`.
    fn kind(&self) -> &'static str;
    fn feature_dim(&self) -> usize;
    /// Runs before a task's first epoch (unit addition).
    fn before_task(&mut self, spec: &TaskSpec) -> Result<(), ContError>;
    fn step(
        &mut self,
        head: &mut Head,
        batch: &[(Tensor, usize)],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepReport, ContError>;
    /// Pure evaluation-time features.
    fn encode(&self, x: &Tensor) -> Result<Vec<f32>, ContError>;
}

impl Learner for Network {
    fn kind(&self) -> &'static str {
        "hrn"
    }

    fn feature_dim(&self) -> usize {
        self.config().hash_dim
    }

    fn before_task(&mut self, spec: &TaskSpec) -> Result<(), ContError> {
        if spec.units_to_add_before > 0 {
            let conv = self.units()[0].conv.clone();
            self.add_units(spec.units_to_add_before, conv)?;
        }
        Ok(())
    }

    fn step(
        &mut self,
        head: &mut Head,
        batch: &[(Tensor, usize)],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepReport, ContError> {
        super::train_step(self, head, batch, cfg, rng)
    }

    fn encode(&self, x: &Tensor) -> Result<Vec<f32>, ContError> {
        Ok(self.route_eval(x)?.output)
    }
}

impl Learner for VcModel {
    fn kind(&self) -> &'static str {
        "vc"
    }

    fn feature_dim(&self) -> usize {
        VcModel::feature_dim(self)
    }

    fn before_task(&mut self, _: &TaskSpec) -> Result<(), ContError> {
        Ok(())
    }

    fn step(
        &mut self,
        head: &mut Head,
        batch: &[(Tensor, usize)],
        _: &TrainConfig,
        _: &mut ChaCha8Rng,
    ) -> Result<StepReport, ContError> {
        self.train_step(head, batch)
    }

    fn encode(&self, x: &Tensor) -> Result<Vec<f32>, ContError> {
        VcModel::encode(self, x)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub metrics: RunMetrics,
    /// One frozen head per task.
    pub heads: Vec<Head>,
}

/// Accuracy of `head` on `data`, re-encoded through the current model.
pub fn evaluate<L: Learner + ?Sized>(learner: &L, head: &Head, data: &LabeledDataset) -> Result<f64, ContError> {
    if data.is_empty() {
        return Err(ContError::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        if y as usize >= head.num_classes() {
            return Err(ContError::InvalidArgument(format!(
                "label {y} does not fit head {} with {} classes",
                head.task_id,
                head.num_classes()
            )));
        }
        if head.predict(&learner.encode(&x)?)? == y as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains the tasks in order. After each task its head is frozen and every
/// head so far is evaluated on its own test set through the current model.
pub fn run_protocol<L: Learner + ?Sized>(
    learner: &mut L,
    tasks: &[Task],
    cfg: &TrainConfig,
    mut trace_out: Option<&mut dyn Write>,
) -> Result<ScenarioOutcome, ContError> {
    if tasks.is_empty() {
        return Err(ContError::InvalidArgument("scenario has no tasks".into()));
    }
    if cfg.batch_size == 0 {
        return Err(ContError::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut route_rng = rng_for(cfg.seed, "routing");
    let mut order_rng = rng_for(cfg.seed, "order");
    let head_seed = derive_seed(cfg.seed, "init");

    let mut metrics = RunMetrics {
        model: learner.kind().to_string(),
        ablations: cfg.ablations,
        seed: cfg.seed,
        accuracy: Vec::new(),
        epochs: Vec::new(),
    };
    let mut heads: Vec<Head> = Vec::with_capacity(tasks.len());

    for (t, task) in tasks.iter().enumerate() {
        task.spec.validate()?;
        if task.train.is_empty() || task.test.is_empty() {
            return Err(ContError::InvalidArgument(format!("task {t} has an empty split")));
        }
        let classes = task.spec.class_labels.len();
        if let Some(l) = task.train.labels().iter().chain(task.test.labels()).find(|l| **l as usize >= classes) {
            return Err(ContError::InvalidArgument(format!("task {t}: label {l} outside {classes} classes")));
        }
        learner.before_task(&task.spec)?;
        let mut head = Head::new(t, learner.feature_dim(), &task.spec.head_spec, classes, head_seed)?;
        head.class_labels = task.spec.class_labels.clone();

        let mut order: Vec<usize> = (0..task.train.len()).collect();
        for epoch in 0..task.spec.epochs {
            order.shuffle(&mut order_rng);
            let mut log = EpochLog {
                task: t,
                epoch,
                loss: 0.0,
                task_loss: 0.0,
                residue_l1: 0.0,
                train_accuracy: 0.0,
                usage: None,
            };
            let mut routes = Vec::new();
            let mut correct = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(Tensor, usize)> = chunk
                    .iter()
                    .map(|&i| {
                        let (x, y) = task.train.sample(i);
                        (x, y as usize)
                    })
                    .collect();
                let r = learner.step(&mut head, &batch, cfg, &mut route_rng)?;
                let n = r.samples as f64;
                log.loss += r.loss * n;
                log.task_loss += r.task_loss * n;
                log.residue_l1 += r.residue_l1 * n;
                correct += r.correct;
                if let Some(out) = trace_out.as_deref_mut() {
                    for (i, tr) in chunk.iter().zip(&r.traces) {
                        writeln!(out, "{}", TraceRecord::from_trace(tr, *i as u64, "train", t, epoch).to_line())
                            .map_err(ContError::Io)?;
                    }
                }
                routes.extend(r.traces.into_iter().map(|tr| tr.unit_ids()));
            }
            let n = order.len() as f64;
            log.loss /= n;
            log.task_loss /= n;
            log.residue_l1 /= n;
            log.train_accuracy = correct as f64 / n;
            if !routes.is_empty() {
                log.usage = Some(UsageRatios::from_routes(&routes)?);
            }
            metrics.epochs.push(log);
        }
        heads.push(head);

        let row = heads
            .iter()
            .zip(tasks)
            .map(|(h, task)| evaluate(&*learner, h, &task.test))
            .collect::<Result<Vec<f64>, _>>()?;
        metrics.accuracy.push(row);
    }
    Ok(ScenarioOutcome { metrics, heads })
}

/// The protocol with the routed network.
pub fn run_scenario(
    net: &mut Network,
    tasks: &[Task],
    cfg: &TrainConfig,
    trace_out: Option<&mut dyn Write>,
) -> Result<ScenarioOutcome, ContError> {
    run_protocol(net, tasks, cfg, trace_out)
}

/// The protocol with the vanilla convolutional baseline built from the same
/// configuration and conv stack.
pub fn vc_baseline(
    config: &NetworkConfig,
    conv: ConvStackSpec,
    tasks: &[Task],
    cfg: &TrainConfig,
) -> Result<(ScenarioOutcome, VcModel), ContError> {
    let input_shape = tasks
        .first()
        .map(|t| t.train.sample_shape())
        .ok_or_else(|| ContError::InvalidArgument("scenario has no tasks".into()))?;
    let mut vc = VcModel::new(config, conv, input_shape, cfg.seed)?;
    let out = run_protocol(&mut vc, tasks, cfg, None)?;
    Ok((out, vc))
}
