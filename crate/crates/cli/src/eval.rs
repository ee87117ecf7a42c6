use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hrn_core::contlearn::{evaluate, load_model, Learner};
use hrn_core::dataio::{load_idx_dir, Split};
use hrn_core::ndcompute::Checkpoint;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub head: usize,
    pub model: &'static str,
    pub samples: usize,
    pub accuracy: f64,
}

impl EvalResult {
    pub fn line(&self) -> String {
        format!(
            "model {} head {} samples {} accuracy {:.6}",
            self.model, self.head, self.samples, self.accuracy
        )
    }
}

/// Scores one task head on the samples of its classes found in `data`
/// (a directory of IDX files). The checkpoint is only read.
pub fn run(checkpoint: &Path, data: &Path, head_id: usize, split: Split) -> Result<EvalResult, CliError> {
    let file = File::open(checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let ck = Checkpoint::read_from(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", checkpoint.display())))?;
    let (model, heads) = load_model(&ck)?;
    let head = heads.iter().find(|h| h.task_id == head_id).ok_or_else(|| {
        let ids: Vec<String> = heads.iter().map(|h| h.task_id.to_string()).collect();
        CliError::Config(format!("checkpoint has no head {head_id} (available: {})", ids.join(", ")))
    })?;
    let ds = load_idx_dir(data, split)?;
    let ds = ds.filter_remap(&head.class_labels)?;
    let accuracy = evaluate(&model, head, &ds)?;
    Ok(EvalResult { head: head_id, model: model.kind(), samples: ds.len(), accuracy })
}
