use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use hrn_core::contlearn::{run_scenario, save_model, vc_baseline, ContError, Model, ScenarioOutcome};
use hrn_core::dataio::make_sequence;
use hrn_core::hrncore::Network;

use crate::config::{ExperimentConfig, ModelKind, Overrides};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::runtime(&format!("writing {}", path.display()), e))
}

/// Runs one experiment and writes everything into the output directory.
/// Returns the report printed to stdout.
pub fn run(config_path: &Path, overrides: &Overrides) -> Result<String, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    cfg.apply(overrides)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::runtime(&format!("creating {}", out.display()), e))?;
    write(&out, CONFIG_FILE, &cfg.resolved_toml())?;

    let tasks = make_sequence(&cfg.scenario.name, &cfg.sequence_options())?;
    let train = cfg.train_config();
    let (outcome, model): (ScenarioOutcome, Model) = match cfg.model {
        ModelKind::Hrn => {
            let mut net = Network::new(cfg.network.clone(), cfg.conv.clone(), cfg.seed).map_err(ContError::from)?;
            let outcome = if cfg.trace_log {
                let path = out.join(TRACE_FILE);
                let file = File::create(&path).map_err(|e| CliError::runtime(&format!("creating {}", path.display()), e))?;
                let mut w = BufWriter::new(file);
                let o = run_scenario(&mut net, &tasks, &train, Some(&mut w))?;
                w.flush().map_err(|e| CliError::runtime("writing trace log", e))?;
                o
            } else {
                run_scenario(&mut net, &tasks, &train, None)?
            };
            (outcome, Model::Hrn(net))
        }
        ModelKind::Vc => {
            let (o, vc) = vc_baseline(&cfg.network, cfg.conv.clone(), &tasks, &train)?;
            (o, Model::Vc(vc))
        }
    };

    let m = &outcome.metrics;
    write(&out, "accuracy.csv", &m.accuracy_csv())?;
    write(&out, "epochs.csv", &m.epochs_csv())?;
    if cfg.model == ModelKind::Hrn {
        write(&out, "usage.csv", &m.usage_csv())?;
    }
    write(&out, "summary.json", &m.summary_json())?;

    let ck = save_model(&model, &outcome.heads);
    let path = out.join(CHECKPOINT_FILE);
    let file = File::create(&path).map_err(|e| CliError::runtime(&format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    ck.write_to(&mut w).map_err(|e| CliError::runtime("writing checkpoint", e))?;
    w.flush().map_err(|e| CliError::runtime("writing checkpoint", e))?;

    let abl = m.ablations.active();
    let mut report = format!(
        "model {} seed {} ablations {}\naccuracy (%), rows: after task, columns: task\n{}",
        m.model,
        m.seed,
        if abl.is_empty() { "none".to_string() } else { abl.join("+") },
        m.accuracy_table()
    );
    for s in m.summaries() {
        report.push_str(&format!(
            "task {}: min {:.2} max {:.2} forgetting {:.2}\n",
            s.task,
            s.min * 100.0,
            s.max * 100.0,
            s.forgetting * 100.0
        ));
    }
    report.push_str(&format!("outputs in {}\n", out.display()));
    Ok(report)
}
