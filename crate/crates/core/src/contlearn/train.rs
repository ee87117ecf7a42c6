use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::hrncore::{Mode, Network, RouteTrace};
use crate::ndcompute::{sgd_step, Tape, Tensor};

use super::{argmax, ContError, Head, TrainConfig};

/// Batch statistics from one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Mean of the full per-sample loss.
    pub loss: f64,
    /// Mean cross-entropy alone.
    pub task_loss: f64,
    /// Mean `sum_j ||r_j||_1`.
    pub residue_l1: f64,
    pub correct: usize,
    pub samples: usize,
    pub traces: Vec<RouteTrace>,
    /// Gradient scale applied to each unit that appeared in some route.
    pub scales: BTreeMap<usize, f64>,
}

/// Per-unit mean of `min(1, ||r||_2)` over the levels where the unit was selected.
pub fn unit_scales(traces: &[RouteTrace]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for t in traces {
        for l in &t.levels {
            let e = acc.entry(l.unit).or_default();
            e.0 += l.residue_norm.min(1.0);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(u, (s, n))| (u, s / n as f64)).collect()
}

/// One SGD step on `batch`: samples are routed in order (train-mode side
/// effects included), gradients are averaged over the batch, and each
/// unit's update is scaled by its recorded residue norm.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut Network,
    head: &mut Head,
    batch: &[(Tensor, usize)],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepReport, ContError> {
    if batch.is_empty() {
        return Err(ContError::EmptyBatch);
    }
    let lambda = if cfg.ablations.lambda_zero { 0.0 } else { net.config().sparsity_weight };
    let lr = net.config().learning_rate as f32;
    net.basis_update = !cfg.ablations.no_basis_update;
    for u in net.units_mut() {
        u.params.zero_grad();
    }
    head.params.zero_grad();

    let weight = 1.0 / batch.len() as f32;
    let mut report = StepReport { samples: batch.len(), ..Default::default() };
    for (x, label) in batch {
        let mut tape = Tape::new();
        let graph = net.route_on_tape(&mut tape, x, Mode::Train, rng)?;
        let head_vars = head.params.bind(&mut tape);
        let logits = head.spec.forward(&mut tape, &head_vars, graph.output)?;
        let ce = tape.softmax_cross_entropy(logits, *label)?;
        let mut loss = ce;
        if lambda > 0.0 {
            for r in &graph.residues {
                let l1 = tape.l1(*r);
                let p = tape.scale(l1, lambda as f32);
                loss = tape.add(loss, p)?;
            }
        }
        tape.backward(loss)?;
        for (unit, vars) in &graph.applied {
            net.unit_mut(*unit).expect("routed unit").params.accumulate_grads(&tape, vars, weight);
        }
        head.params.accumulate_grads(&tape, &head_vars, weight);

        let ce_v = tape.value(ce).data()[0] as f64;
        let l1 = graph.trace.residue_l1();
        report.task_loss += ce_v;
        report.residue_l1 += l1;
        report.loss += ce_v + lambda * l1;
        if argmax(tape.value(logits).data()) == *label {
            report.correct += 1;
        }
        report.traces.push(graph.trace);
    }
    let n = batch.len() as f64;
    report.loss /= n;
    report.task_loss /= n;
    report.residue_l1 /= n;

    report.scales = unit_scales(&report.traces);
    if cfg.ablations.no_grad_regularization {
        report.scales.values_mut().for_each(|s| *s = 1.0);
    }
    for u in net.units_mut() {
        // Units absent from every route get scale 0: no update at all.
        let s = report.scales.get(&u.id).copied().unwrap_or(0.0) as f32;
        let scales = HashMap::from([(u.group(), s)]);
        sgd_step(&mut u.params, lr, &scales)?;
    }
    sgd_step(&mut head.params, lr, &HashMap::new())?;
    Ok(report)
}
