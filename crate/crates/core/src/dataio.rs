//! IDX datasets (MNIST family) and task-sequence construction.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contlearn::TaskSpec;
use crate::ndcompute::Tensor;
use crate::seeding::rng_for;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "HRN_DATA_DIR";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images `[N, C, H, W]` with values in `[0, 1]` and one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<u32>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<u32>, split: Split) -> Result<Self, DataError> {
        if images.shape().len() != 4 {
            return Err(DataError::Format(format!("expected [N, C, H, W] images, got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::Format(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// `[C, H, W]`.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// Sample `i` as a `[C, H, W]` tensor.
    pub fn sample(&self, i: usize) -> (Tensor, u32) {
        let t = Tensor::new(self.sample_shape().to_vec(), self.image(i).to_vec()).expect("sample shape");
        (t, self.labels[i])
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for l in &self.labels {
            *m.entry(*l).or_default() += 1;
        }
        m
    }

    /// Keeps the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.sample_shape();
        Self {
            images: Tensor::new(vec![indices.len(), c, h, w], data).expect("selected shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    /// Keeps samples whose label appears in `classes`, relabelled to its position there.
    pub fn filter_remap(&self, classes: &[u32]) -> Result<Self, DataError> {
        let mut seen = classes.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != classes.len() || classes.is_empty() {
            return Err(DataError::InvalidArgument(format!("class list {classes:?} must be non-empty and distinct")));
        }
        let counts = self.class_counts();
        if let Some(c) = classes.iter().find(|c| !counts.contains_key(c)) {
            return Err(DataError::InvalidArgument(format!("class {c} is absent from the dataset")));
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        let mut out = self.select(&idx);
        for l in &mut out.labels {
            *l = classes.iter().position(|c| c == l).expect("filtered") as u32;
        }
        Ok(out)
    }

    /// Class-stratified seeded subset: `round(fraction * count)` samples per
    /// class (at least one), original order preserved.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<Self, DataError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DataError::InvalidArgument(format!("subsample fraction must be in (0, 1], got {fraction}")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            by_class.entry(*l).or_default().push(i);
        }
        let mut rng = rng_for(seed, "subsample");
        let mut keep = Vec::new();
        for idx in by_class.values_mut() {
            let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
            idx.shuffle(&mut rng);
            keep.extend_from_slice(&idx[..k]);
        }
        keep.sort_unstable();
        Ok(self.select(&keep))
    }

    /// FNV-1a over shape, pixels and labels.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for d in self.images.shape() {
            eat(&(*d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            eat(&v.to_bits().to_le_bytes());
        }
        for l in &self.labels {
            eat(&l.to_le_bytes());
        }
        h
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `[N, 1, H, W]`, bytes scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor, DataError> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::Format(format!("images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let h = be_u32(bytes, 8, "images")? as usize;
    let w = be_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let want = n * h * w;
    if body.len() < want {
        return Err(DataError::Format(format!("images: truncated, expected {want} pixel bytes, found {}", body.len())));
    }
    if body.len() > want {
        return Err(DataError::Format(format!("images: {} trailing bytes", body.len() - want)));
    }
    let data = body.iter().map(|b| *b as f32 / 255.0).collect();
    Tensor::new(vec![n, 1, h, w], data).map_err(|e| DataError::Format(e.to_string()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u32>, DataError> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::Format(format!("labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DataError::Format(format!("labels: header says {n} labels, found {} bytes", body.len())));
    }
    Ok(body.iter().map(|b| *b as u32).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset, DataError> {
    let images = parse_idx_images(&read_file(images_path)?)?;
    let labels = parse_idx_labels(&read_file(labels_path)?)?;
    LabeledDataset::new(images, labels, split)
}

/// Loads `<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn load_idx_dir(dir: &Path, split: Split) -> Result<LabeledDataset, DataError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

/// `$HRN_DATA_DIR`, or `data` when unset.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// Splits `dataset` into one binary task per pair; labels become 0 and 1.
pub fn make_pairwise_tasks(
    dataset: &LabeledDataset,
    pairs: &[(u32, u32)],
) -> Result<Vec<(TaskSpec, LabeledDataset)>, DataError> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            if a == b {
                return Err(DataError::InvalidArgument(format!("pair ({a}, {b}) repeats a class")));
            }
            let spec = TaskSpec { task_id: i, class_labels: vec![a, b], ..TaskSpec::default() };
            Ok((spec, dataset.filter_remap(&[a, b])?))
        })
        .collect()
}

/// A task with both splits.
#[derive(Debug, Clone)]
pub struct Task {
    pub spec: TaskSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceOptions {
    pub epochs: usize,
    /// Hidden widths of every task head.
    pub head_hidden: Vec<usize>,
    /// Fraction of each training split kept (stratified); test splits stay whole.
    pub subsample: f64,
    pub seed: u64,
    /// Units added before the second task of `fashion-then-mnist`.
    pub units_to_add: usize,
    /// Class pairs for `pairwise-mnist`.
    pub pairs: Vec<(u32, u32)>,
    /// Subdirectory of the data root for `incremental-classes`.
    pub dataset: String,
    /// Class groups for `incremental-classes`, one task each.
    pub class_groups: Vec<Vec<u32>>,
    /// Overrides `$HRN_DATA_DIR`.
    pub data_root: Option<PathBuf>,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            epochs: 5,
            head_hidden: vec![64],
            subsample: 1.0,
            seed: 0,
            units_to_add: 2,
            pairs: vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)],
            dataset: "mnist".into(),
            class_groups: Vec::new(),
            data_root: None,
        }
    }
}

pub const SCENARIOS: [&str; 3] = ["pairwise-mnist", "fashion-then-mnist", "incremental-classes"];

/// Builds a named scenario from IDX files under the data root.
pub fn make_sequence(name: &str, opts: &SequenceOptions) -> Result<Vec<Task>, DataError> {
    if !SCENARIOS.contains(&name) {
        return Err(DataError::InvalidArgument(format!(
            "unknown scenario {name:?}; expected one of {}",
            SCENARIOS.join(", ")
        )));
    }
    if opts.epochs == 0 {
        return Err(DataError::InvalidArgument("epochs must be at least 1".into()));
    }
    let root = opts.data_root.clone().unwrap_or_else(data_root);
    let load = |sub: &str| -> Result<(LabeledDataset, LabeledDataset), DataError> {
        let dir = root.join(sub);
        Ok((load_idx_dir(&dir, Split::Train)?, load_idx_dir(&dir, Split::Test)?))
    };
    let groups: Vec<(String, Vec<u32>, usize)> = match name {
        "pairwise-mnist" => opts.pairs.iter().map(|&(a, b)| ("mnist".to_string(), vec![a, b], 0)).collect(),
        "fashion-then-mnist" => vec![
            ("fashion".to_string(), (0..10).collect(), 0),
            ("mnist".to_string(), (0..10).collect(), opts.units_to_add),
        ],
        _ => {
            if opts.class_groups.is_empty() {
                return Err(DataError::InvalidArgument("incremental-classes needs class_groups".into()));
            }
            opts.class_groups.iter().map(|g| (opts.dataset.clone(), g.clone(), 0)).collect()
        }
    };
    if name == "pairwise-mnist" {
        if let Some((a, b)) = opts.pairs.iter().find(|(a, b)| a == b) {
            return Err(DataError::InvalidArgument(format!("pair ({a}, {b}) repeats a class")));
        }
    }
    let mut cache: BTreeMap<String, (LabeledDataset, LabeledDataset)> = BTreeMap::new();
    let mut tasks = Vec::with_capacity(groups.len());
    for (i, (sub, classes, add)) in groups.into_iter().enumerate() {
        if !cache.contains_key(&sub) {
            cache.insert(sub.clone(), load(&sub)?);
        }
        let (train, test) = &cache[&sub];
        let train = train.filter_remap(&classes)?.subsample(opts.subsample, opts.seed ^ i as u64)?;
        let test = test.filter_remap(&classes)?;
        let spec = TaskSpec {
            task_id: i,
            class_labels: classes,
            epochs: opts.epochs,
            head_spec: opts.head_hidden.clone(),
            units_to_add_before: add,
        };
        tasks.push(Task { spec, train, test });
    }
    Ok(tasks)
}
