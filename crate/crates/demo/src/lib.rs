//! Browser demo: three interactive views over the core library, exposed
//! through wasm-bindgen. Every call returns a JSON string so the same code
//! runs and is tested natively.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use hrn_core::feathash::{estimate_inner_product_bias, estimate_self_product};
use hrn_core::hrncore::{Basis, ExpandOutcome, Mode, Network, NetworkConfig, UpdateOutcome};
use hrn_core::ndcompute::{ConvStackSpec, Tensor};

/// Side length of the routing playground's input grid.
pub const GRID: usize = 12;

/// Monte-Carlo check of the hashing trick for each output size in `dims`
/// (comma separated): bias of `phi(a)^T phi(b)` and its variance.
#[wasm_bindgen]
pub fn hash_explorer(dims: &str, n: usize, trials: usize, seed: u32) -> Result<String, String> {
    let dims: Vec<usize> = dims
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|_| format!("bad dimension {d:?}")))
        .collect::<Result<_, _>>()?;
    if dims.is_empty() {
        return Err("no dimensions given".into());
    }
    let mut rows = Vec::new();
    for (i, s) in dims.iter().enumerate() {
        let seed = seed as u64 + 1000 * i as u64;
        let cross = estimate_inner_product_bias(*s, n, trials, seed).map_err(|e| e.to_string())?;
        let own = estimate_self_product(*s, n, trials, seed + 1).map_err(|e| e.to_string())?;
        rows.push(json!({
            "s": s,
            "mean_error": cross.mean_error,
            "std_error": cross.std_error,
            "error_variance": cross.std_error.powi(2) * trials as f64,
            "self_mean": 1.0 + own.mean_error,
            "within_3se": cross.mean_error.abs() < 3.0 * cross.std_error,
        }));
    }
    Ok(json!({ "n": n, "trials": trials, "rows": rows }).to_string())
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / n) as f32).collect()
}

/// A basis fed from a stream of vectors clustered around one of several
/// random subspaces; switching clusters mimics a task change.
#[wasm_bindgen]
pub struct BasisDemo {
    basis: Basis,
    expand_threshold: f64,
    aging_rate: f64,
    /// `clusters[c]` spans a random 3-dimensional subspace.
    clusters: Vec<Vec<Vec<f64>>>,
    current: usize,
    rng: ChaCha8Rng,
    steps: u64,
    expanded: u64,
    replaced: u64,
}

#[derive(Serialize)]
struct BasisState {
    steps: u64,
    expanded: u64,
    replaced: u64,
    cluster: usize,
    nonzero: usize,
    capacity: usize,
    age: u64,
    max_age: u64,
    counters: Vec<u64>,
    gram_deviation: f64,
    /// Mean projection magnitude of fresh samples from each cluster.
    coverage: Vec<f64>,
}

#[wasm_bindgen]
impl BasisDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        dim: usize,
        capacity: usize,
        initial_max_age: u32,
        aging_rate: f64,
        expand_threshold: f64,
        seed: u32,
    ) -> Result<BasisDemo, String> {
        if dim < 4 || capacity == 0 || capacity >= dim {
            return Err(format!("need 0 < capacity < dim and dim >= 4, got dim {dim} capacity {capacity}"));
        }
        if !(aging_rate > 1.0) || initial_max_age == 0 {
            return Err("aging rate must exceed 1 and the initial max age must be positive".into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let clusters = (0..3)
            .map(|_| (0..3).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        Ok(Self {
            basis: Basis::new(dim, capacity, initial_max_age as u64),
            expand_threshold,
            aging_rate,
            clusters,
            current: 0,
            rng,
            steps: 0,
            expanded: 0,
            replaced: 0,
        })
    }

    fn sample(&mut self, cluster: usize) -> Vec<f32> {
        let dim = self.basis.dim();
        let mut v = vec![0.0f64; dim];
        for b in &self.clusters[cluster] {
            let w: f64 = self.rng.gen_range(-1.0..1.0);
            v.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
        }
        v.iter_mut().for_each(|x| *x += 0.15 * self.rng.gen_range(-1.0..1.0));
        unit(v)
    }

    pub fn set_cluster(&mut self, cluster: usize) -> Result<(), String> {
        if cluster >= self.clusters.len() {
            return Err(format!("cluster must be below {}", self.clusters.len()));
        }
        self.current = cluster;
        Ok(())
    }

    /// Feeds `count` samples of the current cluster through the same
    /// expand-then-update sequence a selected unit goes through.
    pub fn feed(&mut self, count: u32) -> String {
        for _ in 0..count {
            let h = self.sample(self.current);
            self.steps += 1;
            if self.basis.is_empty() {
                self.basis.initialize(&h);
                continue;
            }
            if let ExpandOutcome::Expanded { .. } = self.basis.expand(&h, self.expand_threshold) {
                self.expanded += 1;
            }
            if let UpdateOutcome::Replaced { .. } = self.basis.update(&h, self.aging_rate) {
                self.replaced += 1;
            }
        }
        self.state()
    }

    pub fn state(&mut self) -> String {
        let coverage = (0..self.clusters.len())
            .map(|c| {
                let total: f64 = (0..64).map(|_| {
                    let h = self.sample(c);
                    self.basis.projection_magnitude(&h)
                }).sum();
                total / 64.0
            })
            .collect();
        let s = BasisState {
            steps: self.steps,
            expanded: self.expanded,
            replaced: self.replaced,
            cluster: self.current,
            nonzero: self.basis.nonzero_count(),
            capacity: self.basis.capacity(),
            age: self.basis.age(),
            max_age: self.basis.max_age(),
            counters: self.basis.counters().to_vec(),
            gram_deviation: self.basis.gram_deviation(),
            coverage,
        };
        serde_json::to_string(&s).expect("state serializes")
    }
}

/// A small routed network over hand-drawn `GRID x GRID` images.
#[wasm_bindgen]
pub struct RouteDemo {
    net: Network,
    rng: ChaCha8Rng,
    routed: u64,
    /// `usage[level][unit]` over train-mode routes.
    usage: Vec<Vec<u64>>,
}

#[wasm_bindgen]
impl RouteDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(units: usize, depth: usize, empty_threshold: f64, seed: u32) -> Result<RouteDemo, String> {
        let config = NetworkConfig {
            num_units: units,
            depth,
            hash_dim: 64,
            basis_capacity: 8,
            empty_threshold,
            initial_max_age: 10,
            ..NetworkConfig::default()
        };
        let net = Network::new(config, ConvStackSpec::single(2), seed as u64).map_err(|e| e.to_string())?;
        Ok(Self {
            net,
            rng: ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x5eed),
            routed: 0,
            usage: vec![vec![0; units]; depth - 1],
        })
    }

    /// Routes one image given as `GRID * GRID` row-major intensities.
    /// Training mode may initialize, expand and age bases; evaluation
    /// mode only reads them.
    pub fn route(&mut self, pixels: &[f32], train: bool) -> Result<String, String> {
        if pixels.len() != GRID * GRID {
            return Err(format!("expected {} pixels, got {}", GRID * GRID, pixels.len()));
        }
        let x = Tensor::new(vec![1, GRID, GRID], pixels.to_vec()).map_err(|e| e.to_string())?;
        let before = self.net.state_checksum();
        let mode = if train { Mode::Train } else { Mode::Eval };
        let trace = self.net.route(&x, mode, &mut self.rng).map_err(|e| e.to_string())?;
        if train {
            self.routed += 1;
            for (k, l) in trace.levels.iter().enumerate() {
                self.usage[k][l.unit] += 1;
            }
        }
        let levels: Vec<_> = trace
            .levels
            .iter()
            .map(|l| {
                json!({
                    "unit": l.unit,
                    "projection_norm": l.projection_norm,
                    "residue_norm": l.residue_norm,
                    "initialized": l.initialized,
                })
            })
            .collect();
        let out_norm = trace.output.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        Ok(json!({
            "levels": levels,
            "end": trace.end,
            "output_norm": out_norm,
            "state_changed": before != self.net.state_checksum(),
        })
        .to_string())
    }

    /// Basis fill per unit and train-mode usage counts per level.
    pub fn summary(&self) -> String {
        let units: Vec<_> = self
            .net
            .units()
            .iter()
            .map(|u| json!({ "id": u.id, "basis": u.basis.nonzero_count(), "capacity": u.basis.capacity() }))
            .collect();
        json!({ "routed": self.routed, "units": units, "usage": self.usage }).to_string()
    }
}

/// A noisy stroke pattern from one of a few fixed shapes, for quick testing.
#[wasm_bindgen]
pub fn preset(shape: usize, seed: u32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let c = GRID as f32 / 2.0;
    (0..GRID * GRID)
        .map(|p| {
            let (r, q) = ((p / GRID) as f32 + 0.5, (p % GRID) as f32 + 0.5);
            let on = match shape % 4 {
                0 => ((r - c).powi(2) + (q - c).powi(2)).sqrt().round() == 4.0,
                1 => (q - c).abs() < 1.0,
                2 => (r - q).abs() < 1.0,
                _ => (r - c).abs() < 1.0 || (q - c).abs() < 1.0,
            };
            let noise: f32 = rng.gen_range(0.0..0.15);
            if on {
                1.0 - noise
            } else {
                noise
            }
        })
        .collect()
}
