use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use hrn_core::hrncore::{parse_trace_log, TraceLogError, TraceRecord};

use crate::CliError;

pub const USAGE_FILE: &str = "trace_usage.csv";
pub const HIST_FILE: &str = "residue_hist.csv";

/// Per-level unit counts for one group of traces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelCounts {
    /// `levels[k][unit]`, level `k` counted from 0.
    pub levels: Vec<BTreeMap<usize, u64>>,
}

impl LevelCounts {
    fn add(&mut self, r: &TraceRecord) {
        for (k, l) in r.levels.iter().enumerate() {
            if self.levels.len() <= k {
                self.levels.resize_with(k + 1, BTreeMap::new);
            }
            *self.levels[k].entry(l.unit).or_default() += 1;
        }
    }

    /// `(level, unit, count, ratio)`; ratios at each level sum to one.
    pub fn ratios(&self) -> Vec<(usize, usize, u64, f64)> {
        let mut out = Vec::new();
        for (k, m) in self.levels.iter().enumerate() {
            let total: u64 = m.values().sum();
            for (u, c) in m {
                out.push((k, *u, *c, *c as f64 / total as f64));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: usize,
    pub errors: Vec<TraceLogError>,
    pub all: LevelCounts,
    pub by_task: BTreeMap<usize, LevelCounts>,
    /// `hist[k][bin]` over residue norms in `[0, 1]`.
    pub hist: Vec<Vec<u64>>,
    pub bins: usize,
}

pub fn analyze(records: &[TraceRecord], errors: Vec<TraceLogError>, bins: usize) -> Report {
    let mut all = LevelCounts::default();
    let mut by_task: BTreeMap<usize, LevelCounts> = BTreeMap::new();
    let mut hist: Vec<Vec<u64>> = Vec::new();
    for r in records {
        all.add(r);
        by_task.entry(r.task).or_default().add(r);
        for (k, l) in r.levels.iter().enumerate() {
            if hist.len() <= k {
                hist.resize_with(k + 1, || vec![0; bins]);
            }
            // Norms of residues of unit vectors lie in [0, 1]; 1 goes to the last bin.
            let b = ((l.residue_norm.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            hist[k][b] += 1;
        }
    }
    Report { records: records.len(), errors, all, by_task, hist, bins }
}

impl Report {
    /// Levels are numbered from 1 (the first unit selection).
    pub fn usage_csv(&self) -> String {
        let mut s = String::from("task,level,unit,count,ratio\n");
        let groups = std::iter::once(("all".to_string(), &self.all))
            .chain(self.by_task.iter().map(|(t, c)| (t.to_string(), c)));
        for (name, counts) in groups {
            for (k, u, c, r) in counts.ratios() {
                let _ = writeln!(s, "{name},{},{u},{c},{r}", k + 1);
            }
        }
        s
    }

    pub fn hist_csv(&self) -> String {
        let mut s = String::from("level,bin_start,bin_end,count\n");
        let w = 1.0 / self.bins as f64;
        for (k, h) in self.hist.iter().enumerate() {
            for (b, c) in h.iter().enumerate() {
                let _ = writeln!(s, "{},{:.4},{:.4},{c}", k + 1, b as f64 * w, (b + 1) as f64 * w);
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} traces, {} bad lines\n", self.records, self.errors.len());
        for (k, m) in self.all.levels.iter().enumerate() {
            let total: u64 = m.values().sum();
            let parts: Vec<String> =
                m.iter().map(|(u, c)| format!("unit {u} {:.3}", *c as f64 / total as f64)).collect();
            let _ = writeln!(s, "level {} ({total} routes): {}", k + 1, parts.join(", "));
        }
        s
    }
}

/// Reads a trace log and writes the usage and histogram files. Bad lines are
/// reported and skipped.
pub fn run(log: &Path, out: Option<&Path>, bins: usize) -> Result<(Report, PathBuf), CliError> {
    if bins == 0 {
        return Err(CliError::Config("--bins must be at least 1".into()));
    }
    let file = File::open(log).map_err(|e| CliError::Data(format!("{}: {e}", log.display())))?;
    let (records, errors) =
        parse_trace_log(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", log.display())))?;
    for e in &errors {
        eprintln!("{}:{}: skipped: {}", log.display(), e.line, e.message);
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no readable trace records", log.display())));
    }
    let report = analyze(&records, errors, bins);
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => log.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    fs::create_dir_all(&dir).map_err(|e| CliError::runtime(&format!("creating {}", dir.display()), e))?;
    for (name, text) in [(USAGE_FILE, report.usage_csv()), (HIST_FILE, report.hist_csv())] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::runtime(&format!("writing {}", p.display()), e))?;
    }
    Ok((report, dir))
}
