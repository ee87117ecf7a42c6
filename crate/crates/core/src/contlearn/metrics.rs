use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hrncore::UsageRatios;

use super::Ablations;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub task: usize,
    pub epoch: usize,
    pub loss: f64,
    pub task_loss: f64,
    /// Mean `sum_j ||r_j||_1` per sample (0 for the baseline).
    pub residue_l1: f64,
    pub train_accuracy: f64,
    /// Route usage over the epoch's training samples; `None` for the baseline.
    pub usage: Option<UsageRatios>,
}

/// Accuracy matrix and training curves of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `hrn` or `vc`.
    pub model: String,
    pub ablations: Ablations,
    pub seed: u64,
    /// `accuracy[i][j]`: accuracy on task `j`'s test set after training task `i` (`j <= i`).
    pub accuracy: Vec<Vec<f64>>,
    pub epochs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub min: f64,
    pub max: f64,
    pub forgetting: f64,
    pub final_accuracy: f64,
}

impl RunMetrics {
    pub fn num_tasks(&self) -> usize {
        self.accuracy.len()
    }

    pub fn get(&self, after: usize, task: usize) -> Option<f64> {
        self.accuracy.get(after).and_then(|r| r.get(task)).copied()
    }

    fn column(&self, task: usize) -> impl Iterator<Item = f64> + '_ {
        self.accuracy.iter().filter_map(move |r| r.get(task).copied())
    }

    /// Minimum and maximum accuracy of `task` over all evaluations.
    pub fn min_max(&self, task: usize) -> Option<(f64, f64)> {
        self.column(task).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Accuracy right after training `task` minus accuracy after the last task.
    pub fn forgetting(&self, task: usize) -> Option<f64> {
        let last = self.accuracy.last()?;
        Some(self.get(task, task)? - last.get(task)?)
    }

    pub fn summaries(&self) -> Vec<TaskSummary> {
        (0..self.num_tasks())
            .map(|t| {
                let (min, max) = self.min_max(t).expect("task evaluated");
                TaskSummary {
                    task: t,
                    min,
                    max,
                    forgetting: self.forgetting(t).expect("task evaluated"),
                    final_accuracy: self.accuracy.last().and_then(|r| r.get(t)).copied().unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    /// Usage ratios from the last epoch of `task`.
    pub fn final_usage(&self, task: usize) -> Option<&UsageRatios> {
        self.epochs.iter().rev().find(|e| e.task == task).and_then(|e| e.usage.as_ref())
    }

    fn header(&self) -> String {
        let abl = self.ablations.active();
        let abl = if abl.is_empty() { "none".to_string() } else { abl.join("+") };
        format!("# model={} ablations={} seed={}\n", self.model, abl, self.seed)
    }

    pub fn accuracy_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("after_task,task,accuracy\n");
        for (i, row) in self.accuracy.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let _ = writeln!(s, "{i},{j},{a:.6}");
            }
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("task,epoch,loss,task_loss,residue_l1,train_accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                e.task, e.epoch, e.loss, e.task_loss, e.residue_l1, e.train_accuracy
            );
        }
        s
    }

    /// Levels are numbered from 1 (the first unit selection).
    pub fn usage_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("task,epoch,level,unit,ratio\n");
        for e in &self.epochs {
            let Some(u) = &e.usage else { continue };
            for (k, m) in u.levels.iter().enumerate() {
                for (unit, r) in m {
                    let _ = writeln!(s, "{},{},{},{unit},{r:.6}", e.task, e.epoch, k + 1);
                }
            }
        }
        s
    }

    /// Structured summary: per-task min/max/forgetting and final usage ratios.
    pub fn summary_json(&self) -> String {
        let usage: Vec<_> = (0..self.num_tasks())
            .map(|t| {
                self.final_usage(t).map(|u| {
                    u.levels
                        .iter()
                        .map(|m| m.iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect::<serde_json::Map<_, _>>())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let v = serde_json::json!({
            "model": self.model,
            "ablations": self.ablations.active(),
            "seed": self.seed,
            "tasks": self.summaries(),
            "accuracy": self.accuracy,
            "final_usage_per_task": usage,
        });
        serde_json::to_string_pretty(&v).expect("summary serializes") + "\n"
    }

    /// Renders the lower-triangular accuracy matrix in percent.
    pub fn accuracy_table(&self) -> String {
        let mut s = String::from("after\\task");
        for j in 0..self.num_tasks() {
            let _ = write!(s, "  T{j:<5}");
        }
        s.push('\n');
        for (i, row) in self.accuracy.iter().enumerate() {
            let _ = write!(s, "T{i:<9}");
            for a in row {
                let _ = write!(s, "  {:<6.2}", a * 100.0);
            }
            s.push('\n');
        }
        s
    }
}
