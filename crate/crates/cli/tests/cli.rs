use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const H: usize = 12;

fn idx_images(images: &[Vec<u8>]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x803u32, images.len() as u32, H as u32, H as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    images.iter().for_each(|i| b.extend_from_slice(i));
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0x801u32.to_be_bytes());
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Ten classes, each a bright bar at its own row plus a little texture.
fn write_split(dir: &Path, prefix: &str, per_class: usize, salt: usize) {
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for i in 0..per_class {
        for c in 0..10usize {
            let img: Vec<u8> = (0..H * H)
                .map(|p| {
                    let (r, q) = (p / H, p % H);
                    if r == c + 1 || (c >= 5 && q == c - 4) {
                        220
                    } else {
                        ((p * 7 + i * 13 + c * 5 + salt) % 40) as u8
                    }
                })
                .collect();
            images.push(img);
            labels.push(c as u8);
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), idx_images(&images)).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx_labels(&labels)).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let mnist = dir.path().join("data/mnist");
        fs::create_dir_all(&mnist).unwrap();
        write_split(&mnist, "train", 12, 0);
        write_split(&mnist, "t10k", 6, 3);
        let f = Self { dir };
        f.config("exp.toml", "");
        f
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    /// Writes a small pairwise config; `extra` goes at the top level.
    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            r#"{extra}
seed = 1
batch_size = 4
data_dir = "data"
output_dir = "out"

[network]
num_units = 3
depth = 3
hash_dim = 32
basis_capacity = 6
stop_threshold = 0.05
empty_threshold = 0.6
expand_threshold = 0.4
aging_rate = 1.2
initial_max_age = 5
sparsity_weight = 0.01
learning_rate = 0.1

[[conv.layers]]
in_channels = 2
out_channels = 2
kernel_size = 3
padding = 1
pool = true

[scenario]
name = "pairwise-mnist"
epochs = 2
head_hidden = [8]
pairs = [[0, 1], [2, 3]]
"#
        );
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn hrn(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_hrn"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("HRN_DATA_DIR")
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const OUTPUTS: [&str; 7] =
    ["config.toml", "accuracy.csv", "epochs.csv", "usage.csv", "summary.json", "trace.jsonl", "model.ckpt"];

#[test]
fn train_writes_all_outputs() {
    let f = Fixture::new();
    let o = f.hrn(&["train", "exp.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("after\\task"), "{}", stdout(&o));
    for name in OUTPUTS {
        assert!(f.path("out").join(name).is_file(), "missing {name}");
    }
    let acc = fs::read_to_string(f.path("out/accuracy.csv")).unwrap();
    assert!(acc.starts_with("# model=hrn ablations=none seed=1\nafter_task,task,accuracy\n"), "{acc}");
    assert_eq!(acc.lines().count(), 2 + 3);
    let echoed = fs::read_to_string(f.path("out/config.toml")).unwrap();
    assert!(echoed.contains("stop_threshold = 0.05"), "{echoed}");
    assert!(echoed.contains(&f.path("data").display().to_string()), "{echoed}");
    let traces = fs::read_to_string(f.path("out/trace.jsonl")).unwrap();
    // 2 tasks x 2 epochs x 24 samples.
    assert_eq!(traces.lines().count(), 96);
}

#[test]
fn same_seed_gives_identical_files() {
    let f = Fixture::new();
    for out in ["a", "b"] {
        let o = f.hrn(&["train", "exp.toml", "--seed", "7", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in OUTPUTS.iter().filter(|n| **n != "config.toml") {
        let a = fs::read(f.path("a").join(name)).unwrap();
        let b = fs::read(f.path("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    let cfg = fs::read_to_string(f.path("a/config.toml")).unwrap();
    assert!(cfg.contains("seed = 7"), "{cfg}");
}

#[test]
fn ablation_flag_is_recorded() {
    let f = Fixture::new();
    let o = f.hrn(&["train", "exp.toml", "--ablate", "lambda_zero", "--subsample", "0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let acc = fs::read_to_string(f.path("out/accuracy.csv")).unwrap();
    assert!(acc.starts_with("# model=hrn ablations=lambda_zero seed=1"), "{acc}");
    let cfg = fs::read_to_string(f.path("out/config.toml")).unwrap();
    assert!(cfg.contains("lambda_zero") && cfg.contains("subsample = 0.5"), "{cfg}");
}

#[test]
fn config_errors_exit_with_one() {
    let f = Fixture::new();
    let p = f.path("exp.toml");
    let text = fs::read_to_string(&p).unwrap().replace("stop_threshold = 0.05\n", "");
    fs::write(f.path("bad.toml"), text).unwrap();
    let o = f.hrn(&["train", "bad.toml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("stop_threshold"), "{}", stderr(&o));

    let text = fs::read_to_string(&p).unwrap().replace("aging_rate = 1.2", "aging_rate = 0.9");
    fs::write(f.path("bad.toml"), text).unwrap();
    let o = f.hrn(&["train", "bad.toml"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bad.toml:15:"), "{}", stderr(&o));

    assert_eq!(code(&f.hrn(&["train", "exp.toml", "--ablate", "everything"])), 1);
    assert_eq!(code(&f.hrn(&["train", "missing.toml"])), 1);
    assert_eq!(code(&f.hrn(&["frobnicate"])), 1);
}

#[test]
fn missing_data_exits_with_two() {
    let f = Fixture::new();
    fs::remove_dir_all(f.path("data/mnist")).unwrap();
    let o = f.hrn(&["train", "exp.toml"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("mnist"), "{}", stderr(&o));
}

fn final_accuracy(csv: &str, task: usize) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().skip(2).map(|l| l.split(',').collect()).collect();
    let last = rows.iter().map(|r| r[0]).max().unwrap();
    rows.iter().find(|r| r[0] == last && r[1] == task.to_string()).unwrap()[2].to_string()
}

#[test]
fn eval_matches_the_accuracy_matrix_and_is_pure() {
    let f = Fixture::new();
    assert_eq!(code(&f.hrn(&["train", "exp.toml"])), 0);
    let acc = fs::read_to_string(f.path("out/accuracy.csv")).unwrap();
    let before = fs::read(f.path("out/model.ckpt")).unwrap();
    for head in 0..2 {
        let h = head.to_string();
        let a = f.hrn(&["eval", "out/model.ckpt", "data/mnist", &h]);
        let b = f.hrn(&["eval", "out/model.ckpt", "data/mnist", &h]);
        assert_eq!(code(&a), 0, "{}", stderr(&a));
        assert_eq!(stdout(&a), stdout(&b));
        let expected = final_accuracy(&acc, head);
        assert!(stdout(&a).trim_end().ends_with(&format!("accuracy {expected}")), "{} vs {expected}", stdout(&a));
        assert!(stdout(&a).contains("samples 12"), "{}", stdout(&a));
    }
    assert_eq!(before, fs::read(f.path("out/model.ckpt")).unwrap());

    let o = f.hrn(&["eval", "out/model.ckpt", "data/mnist", "9"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("available: 0, 1"), "{}", stderr(&o));
    assert_eq!(code(&f.hrn(&["eval", "nope.ckpt", "data/mnist", "0"])), 2);
    assert_eq!(code(&f.hrn(&["eval", "out/trace.jsonl", "data/mnist", "0"])), 2);
}

#[test]
fn baseline_model_trains_and_evaluates() {
    let f = Fixture::new();
    f.config("vc.toml", "model = \"vc\"");
    let o = f.hrn(&["train", "vc.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!f.path("out/trace.jsonl").exists());
    let acc = fs::read_to_string(f.path("out/accuracy.csv")).unwrap();
    assert!(acc.starts_with("# model=vc"));
    let e = f.hrn(&["eval", "out/model.ckpt", "data/mnist", "1"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    assert!(stdout(&e).contains(&format!("model vc head 1 samples 12 accuracy {}", final_accuracy(&acc, 1))));
}

#[test]
fn inspect_reports_bad_lines_and_is_reproducible() {
    let f = Fixture::new();
    assert_eq!(code(&f.hrn(&["train", "exp.toml"])), 0);
    let log = fs::read_to_string(f.path("out/trace.jsonl")).unwrap();
    let mut lines: Vec<&str> = log.lines().collect();
    lines.insert(2, "{not json");
    fs::write(f.path("broken.jsonl"), lines.join("\n")).unwrap();

    let o = f.hrn(&["inspect", "broken.jsonl", "--out", "r1", "--bins", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("broken.jsonl:3:"), "{}", stderr(&o));
    assert!(stdout(&o).contains("96 traces, 1 bad lines"), "{}", stdout(&o));
    let o = f.hrn(&["inspect", "broken.jsonl", "--out", "r2", "--bins", "10"]);
    assert_eq!(code(&o), 0);
    for name in ["trace_usage.csv", "residue_hist.csv"] {
        assert_eq!(fs::read(f.path("r1").join(name)).unwrap(), fs::read(f.path("r2").join(name)).unwrap());
    }
    let hist = fs::read_to_string(f.path("r1/residue_hist.csv")).unwrap();
    let level1: u64 = hist.lines().skip(1).filter(|l| l.starts_with("1,")).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(level1, 96);

    let usage = fs::read_to_string(f.path("r1/trace_usage.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<(String, String), f64>::new();
    for l in usage.lines().skip(1) {
        let c: Vec<&str> = l.split(',').collect();
        *sums.entry((c[0].into(), c[1].into())).or_default() += c[4].parse::<f64>().unwrap();
    }
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-9), "{sums:?}");

    // Default output goes next to the log.
    assert_eq!(code(&f.hrn(&["inspect", "out/trace.jsonl"])), 0);
    assert!(f.path("out/trace_usage.csv").is_file());
    assert_eq!(code(&f.hrn(&["inspect", "absent.jsonl"])), 2);
}
