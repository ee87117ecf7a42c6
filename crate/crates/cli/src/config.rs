//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use hrn_core::contlearn::{Ablations, TrainConfig};
use hrn_core::dataio::{self, SequenceOptions, SCENARIOS};
use hrn_core::hrncore::NetworkConfig;
use hrn_core::ndcompute::ConvStackSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Hash-routed network.
    Hrn,
    /// Plain convolutional baseline.
    Vc,
}

/// Which task sequence to build and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::head_hidden")]
    pub head_hidden: Vec<usize>,
    #[serde(default = "defaults::units_to_add")]
    pub units_to_add: usize,
    #[serde(default = "defaults::pairs")]
    pub pairs: Vec<(u32, u32)>,
    #[serde(default = "defaults::dataset")]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_groups: Vec<Vec<u32>>,
}

mod defaults {
    use super::*;

    pub fn epochs() -> usize {
        SequenceOptions::default().epochs
    }
    pub fn head_hidden() -> Vec<usize> {
        SequenceOptions::default().head_hidden
    }
    pub fn units_to_add() -> usize {
        SequenceOptions::default().units_to_add
    }
    pub fn pairs() -> Vec<(u32, u32)> {
        SequenceOptions::default().pairs
    }
    pub fn dataset() -> String {
        SequenceOptions::default().dataset
    }
    pub fn model() -> ModelKind {
        ModelKind::Hrn
    }
    pub fn batch_size() -> usize {
        TrainConfig::default().batch_size
    }
    pub fn subsample() -> f64 {
        1.0
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/latest")
    }
    pub fn conv() -> ConvStackSpec {
        ConvStackSpec::single(4)
    }
    pub fn yes() -> bool {
        true
    }
}

/// Everything one `train` invocation needs. Top-level keys come before the
/// `[network]`, `[conv]` and `[scenario]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    /// Fraction of each training split kept, stratified by class.
    #[serde(default = "defaults::subsample")]
    pub subsample: f64,
    /// Any of `no_grad_regularization`, `lambda_zero`, `no_basis_update`.
    #[serde(default)]
    pub ablations: Vec<String>,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    /// Falls back to `$HRN_DATA_DIR`, then `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Write one JSON line per routed training sample.
    #[serde(default = "defaults::yes")]
    pub trace_log: bool,
    pub network: NetworkConfig,
    #[serde(default = "defaults::conv")]
    pub conv: ConvStackSpec,
    pub scenario: ScenarioConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ablate: Vec<String>,
    pub subsample: Option<f64>,
    pub out: Option<PathBuf>,
}

/// `(table, key)` of a config entry.
type ConfigKey = (&'static str, &'static str);

impl ExperimentConfig {
    /// Parses and validates `text`; `path` only labels messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate().map_err(|(key, msg)| {
            let at = key.and_then(|(table, k)| locate(text, table, k));
            match at {
                Some(line) => CliError::Config(format!("{}:{line}: {msg}", path.display())),
                None => CliError::Config(format!("{}: {msg}", path.display())),
            }
        })?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = std::path::absolute(path)
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or_default();
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = cfg.data_dir.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(f) = o.subsample {
            self.subsample = f;
        }
        if let Some(d) = &o.out {
            self.output_dir = d.clone();
        }
        for a in &o.ablate {
            let name = a.replace('-', "_");
            if !self.ablations.contains(&name) {
                self.ablations.push(name);
            }
        }
        self.validate().map_err(|(_, m)| CliError::Config(m))
    }

    /// On failure returns the offending `(table, key)` when known.
    fn validate(&self) -> Result<(), (Option<ConfigKey>, String)> {
        if let Err(e) = self.network.validate() {
            let msg = e.to_string();
            let key = NETWORK_KEYS.iter().filter_map(|k| msg.find(k).map(|at| (at, *k))).min().map(|(_, k)| ("network", k));
            return Err((key, msg));
        }
        if let Err(e) = self.conv.validate() {
            return Err((Some(("conv", "layers")), e.to_string()));
        }
        if self.conv.in_channels() != self.conv.out_channels() {
            return Err((Some(("conv", "layers")), "conv stacks must preserve the channel count".into()));
        }
        if self.batch_size == 0 {
            return Err((Some(("", "batch_size")), "batch_size must be at least 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err((Some(("", "subsample")), format!("subsample must be in (0, 1], got {}", self.subsample)));
        }
        let mut abl = Ablations::default();
        for a in &self.ablations {
            abl.enable(a).map_err(|e| (Some(("", "ablations")), e.to_string()))?;
        }
        if !SCENARIOS.contains(&self.scenario.name.as_str()) {
            return Err((
                Some(("scenario", "name")),
                format!("unknown scenario {:?}; expected one of {}", self.scenario.name, SCENARIOS.join(", ")),
            ));
        }
        if self.scenario.epochs == 0 {
            return Err((Some(("scenario", "epochs")), "epochs must be at least 1".into()));
        }
        if self.scenario.head_hidden.contains(&0) {
            return Err((Some(("scenario", "head_hidden")), "head layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn ablations(&self) -> Ablations {
        let mut a = Ablations::default();
        for name in &self.ablations {
            a.enable(name).expect("validated");
        }
        a
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { batch_size: self.batch_size, ablations: self.ablations(), seed: self.seed }
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(dataio::data_root)
    }

    pub fn sequence_options(&self) -> SequenceOptions {
        let s = &self.scenario;
        SequenceOptions {
            epochs: s.epochs,
            head_hidden: s.head_hidden.clone(),
            subsample: self.subsample,
            seed: self.seed,
            units_to_add: s.units_to_add,
            pairs: s.pairs.clone(),
            dataset: s.dataset.clone(),
            class_groups: s.class_groups.clone(),
            data_root: Some(self.data_root()),
        }
    }

    /// The config as written to the output directory, with the data root
    /// resolved.
    pub fn resolved_toml(&self) -> String {
        let mut c = self.clone();
        c.data_dir = Some(self.data_root());
        toml::to_string(&c).expect("config serializes")
    }
}

const NETWORK_KEYS: [&str; 11] = [
    "num_units",
    "depth",
    "hash_dim",
    "basis_capacity",
    "stop_threshold",
    "empty_threshold",
    "expand_threshold",
    "aging_rate",
    "initial_max_age",
    "sparsity_weight",
    "learning_rate",
];

/// 1-based line of `key = ...` inside `[table]` (`""` for the top level).
fn locate(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[') {
            current = h.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            continue;
        }
        let in_table = current == table || current.starts_with(&format!("{table}."));
        if in_table && t.split('=').next().map(str::trim) == Some(key) && t.contains('=') {
            return Some(i + 1);
        }
    }
    None
}
