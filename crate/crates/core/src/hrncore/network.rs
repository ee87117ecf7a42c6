use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::feathash::{HashSpec, HashedVec};
use crate::ndcompute::{Checkpoint, ConvStackSpec, ParamSet, Tensor};
use crate::seeding::{derive_seed, rng_for};

use super::basis::{Basis, ExpandOutcome, UpdateOutcome};
use super::{HrnError, NetworkConfig};

/// One routable unit: a conv stack, its hash function and its basis.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitState {
    pub id: usize,
    pub conv: ConvStackSpec,
    pub params: ParamSet,
    pub hash: HashSpec,
    pub basis: Basis,
}

impl UnitState {
    /// Parameter group name used for gradient scaling.
    pub fn group(&self) -> String {
        unit_group(self.id)
    }

    pub fn is_initialized(&self) -> bool {
        !self.basis.is_empty()
    }

    pub fn expand_basis(&mut self, h: &HashedVec, config: &NetworkConfig) -> ExpandOutcome {
        self.basis.expand(&h.values, config.expand_threshold)
    }

    pub fn update_basis(&mut self, h: &HashedVec, config: &NetworkConfig) -> UpdateOutcome {
        self.basis.update(&h.values, config.aging_rate)
    }
}

pub(crate) fn unit_group(id: usize) -> String {
    format!("unit.{id}")
}

/// A pool of units sharing a feature-channel width, plus the input hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    input_hash: HashSpec,
    units: Vec<UnitState>,
    channels: usize,
    hash_seed: u64,
    init_seed: u64,
    next_hash_index: u64,
    /// Whether train-mode routing runs the aging update.
    pub basis_update: bool,
}

impl Network {
    /// Builds `config.num_units` units with identical conv stacks. Hash seeds
    /// and initial weights are derived from `seed`.
    pub fn new(config: NetworkConfig, conv: ConvStackSpec, seed: u64) -> Result<Self, HrnError> {
        config.validate()?;
        let channels = check_conv(&conv)?;
        let hash_seed = derive_seed(seed, "hash");
        let mut net = Self {
            input_hash: HashSpec::new(0, config.hash_dim)?,
            units: Vec::new(),
            channels,
            hash_seed,
            init_seed: derive_seed(seed, "init"),
            next_hash_index: 0,
            basis_update: true,
            config,
        };
        net.input_hash = net.fresh_hash(&HashSet::new())?;
        let k = net.config.num_units;
        net.config.num_units = 0;
        net.add_units(k, conv)?;
        Ok(net)
    }

    /// Builds a network with explicit hash seeds (`unit_seeds.len()` units).
    /// Duplicate seeds, including the input hash seed, are rejected.
    pub fn with_hash_seeds(
        config: NetworkConfig,
        conv: ConvStackSpec,
        input_seed: u64,
        unit_seeds: &[u64],
        init_seed: u64,
    ) -> Result<Self, HrnError> {
        let config = NetworkConfig { num_units: unit_seeds.len(), ..config };
        config.validate()?;
        let channels = check_conv(&conv)?;
        let mut seen = HashSet::new();
        for s in std::iter::once(&input_seed).chain(unit_seeds) {
            if !seen.insert(*s) {
                return Err(HrnError::Config(format!("duplicate hash seed {s}")));
            }
        }
        let s = config.hash_dim;
        let units = unit_seeds
            .iter()
            .enumerate()
            .map(|(id, seed)| {
                Ok(UnitState {
                    id,
                    params: conv.init_params(&mut rng_for(init_seed, &unit_group(id)), &unit_group(id)),
                    conv: conv.clone(),
                    hash: HashSpec::new(*seed, s)?,
                    basis: Basis::new(s, config.basis_capacity, config.initial_max_age),
                })
            })
            .collect::<Result<Vec<_>, HrnError>>()?;
        Ok(Self {
            input_hash: HashSpec::new(input_seed, s)?,
            units,
            channels,
            hash_seed: derive_seed(init_seed, "hash"),
            init_seed,
            next_hash_index: 0,
            basis_update: true,
            config,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Routing thresholds may be retuned between runs; structural fields
    /// (unit count, dimensions) are kept.
    pub fn set_thresholds(&mut self, stop: f64, empty: f64, expand: f64) {
        self.config.stop_threshold = stop;
        self.config.empty_threshold = empty;
        self.config.expand_threshold = expand;
    }

    pub fn input_hash(&self) -> &HashSpec {
        &self.input_hash
    }

    pub fn units(&self) -> &[UnitState] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [UnitState] {
        &mut self.units
    }

    pub fn unit(&self, id: usize) -> Option<&UnitState> {
        self.units.get(id)
    }

    pub fn unit_mut(&mut self, id: usize) -> Option<&mut UnitState> {
        self.units.get_mut(id)
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    /// Feature channels every unit consumes and produces.
    pub fn channels(&self) -> usize {
        self.channels
    }

    fn fresh_hash(&mut self, taken: &HashSet<u64>) -> Result<HashSpec, HrnError> {
        loop {
            let seed = derive_seed(self.hash_seed, &self.next_hash_index.to_string());
            self.next_hash_index += 1;
            if !taken.contains(&seed) {
                return Ok(HashSpec::new(seed, self.config.hash_dim)?);
            }
        }
    }

    fn taken_seeds(&self) -> HashSet<u64> {
        std::iter::once(self.input_hash.seed())
            .chain(self.units.iter().map(|u| u.hash.seed()))
            .collect()
    }

    /// Appends `k` units with empty bases and fresh hash seeds. Existing
    /// units are left untouched. Returns the new unit ids.
    pub fn add_units(&mut self, k: usize, conv: ConvStackSpec) -> Result<Vec<usize>, HrnError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let channels = check_conv(&conv)?;
        if channels != self.channels && !self.units.is_empty() {
            return Err(HrnError::Config(format!(
                "new units use {channels} channels, network uses {}",
                self.channels
            )));
        }
        let mut ids = Vec::with_capacity(k);
        for _ in 0..k {
            let taken = self.taken_seeds();
            let hash = self.fresh_hash(&taken)?;
            let id = self.units.len();
            let group = unit_group(id);
            self.units.push(UnitState {
                id,
                params: conv.init_params(&mut rng_for(self.init_seed, &group), &group),
                conv: conv.clone(),
                hash,
                basis: Basis::new(self.config.hash_dim, self.config.basis_capacity, self.config.initial_max_age),
            });
            ids.push(id);
        }
        self.config.num_units = self.units.len();
        Ok(ids)
    }

    /// Best initialized unit outside `used`, by projection magnitude. Ties go
    /// to the lowest id.
    pub fn best_initialized(&self, h: &HashedVec, used: &[usize]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for u in &self.units {
            if !u.is_initialized() || used.contains(&u.id) {
                continue;
            }
            let m = u.basis.projection_magnitude(&h.values);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((u.id, m));
            }
        }
        best
    }

    /// Train-mode unit selection with lazy initialization of empty units.
    ///
    /// Returns the chosen unit and whether its basis was initialized with `h`
    /// by this call.
    pub fn select_unit<R: Rng + ?Sized>(
        &mut self,
        h: &HashedVec,
        used: &[usize],
        rng: &mut R,
    ) -> Result<(usize, bool), HrnError> {
        if self.units.iter().all(|u| used.contains(&u.id)) {
            return Err(HrnError::Exhausted);
        }
        let empties: Vec<usize> = self
            .units
            .iter()
            .filter(|u| !u.is_initialized() && !used.contains(&u.id))
            .map(|u| u.id)
            .collect();
        let any_initialized = self.units.iter().any(|u| u.is_initialized());
        let pick_empty = if !any_initialized {
            true
        } else if empties.is_empty() {
            false
        } else {
            match self.best_initialized(h, used) {
                Some((_, m)) => m < self.config.empty_threshold,
                None => true,
            }
        };
        if pick_empty {
            let id = *empties.choose(rng).ok_or(HrnError::Exhausted)?;
            self.units[id].basis.initialize(&h.values);
            return Ok((id, true));
        }
        let (id, _) = self.best_initialized(h, used).ok_or(HrnError::Exhausted)?;
        Ok((id, false))
    }

    /// FNV-1a over every basis, counter, age and parameter.
    pub fn state_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for u in &self.units {
            eat(u.id as u64);
            eat(u.hash.seed());
            eat(u.params.checksum());
            eat(u.basis.age());
            eat(u.basis.max_age());
            for c in u.basis.counters() {
                eat(*c);
            }
            for i in 0..u.basis.capacity() {
                match u.basis.slot(i) {
                    Some(v) => v.iter().for_each(|x| eat(x.to_bits() as u64)),
                    None => eat(u64::MAX),
                }
            }
        }
        h
    }

    /// Serializable description plus named tensors (`unit.{id}.{param}` and
    /// `unit.{id}.basis.{slot}`).
    pub fn to_parts(&self) -> (serde_json::Value, Vec<(String, Tensor)>) {
        let meta = NetworkMeta {
            config: self.config.clone(),
            input_hash_seed: self.input_hash.seed(),
            channels: self.channels,
            hash_seed: self.hash_seed,
            init_seed: self.init_seed,
            next_hash_index: self.next_hash_index,
            basis_update: self.basis_update,
            units: self
                .units
                .iter()
                .map(|u| UnitMeta {
                    id: u.id,
                    hash_seed: u.hash.seed(),
                    conv: u.conv.clone(),
                    counters: u.basis.counters().to_vec(),
                    age: u.basis.age(),
                    max_age: u.basis.max_age(),
                    slots: (0..u.basis.capacity()).map(|i| u.basis.slot(i).is_some()).collect(),
                    params: u.params.iter().map(|p| (p.name.clone(), p.group.clone())).collect(),
                })
                .collect(),
        };
        let mut tensors = Vec::new();
        for u in &self.units {
            for p in u.params.iter() {
                tensors.push((format!("unit.{}.{}", u.id, p.name), p.value.clone()));
            }
            for (i, v) in u.basis.vectors() {
                tensors.push((format!("unit.{}.basis.{i}", u.id), Tensor::from_vec(v.to_vec())));
            }
        }
        (serde_json::to_value(meta).expect("network meta serializes"), tensors)
    }

    pub fn from_parts(meta: &serde_json::Value, ck: &Checkpoint) -> Result<Self, HrnError> {
        let meta: NetworkMeta = serde_json::from_value(meta.clone())
            .map_err(|e| HrnError::Checkpoint(format!("network metadata: {e}")))?;
        let s = meta.config.hash_dim;
        let missing = |n: &str| HrnError::Checkpoint(format!("missing tensor {n}"));
        let mut units = Vec::with_capacity(meta.units.len());
        for u in meta.units {
            let mut params = ParamSet::new();
            for (name, group) in &u.params {
                let key = format!("unit.{}.{name}", u.id);
                params.insert(name.clone(), group.clone(), ck.get(&key).ok_or_else(|| missing(&key))?.clone());
            }
            let mut slots = Vec::with_capacity(u.slots.len());
            for (i, filled) in u.slots.iter().enumerate() {
                if *filled {
                    let key = format!("unit.{}.basis.{i}", u.id);
                    let t = ck.get(&key).ok_or_else(|| missing(&key))?;
                    if t.len() != s {
                        return Err(HrnError::Checkpoint(format!("{key} has length {}", t.len())));
                    }
                    slots.push(Some(t.data().to_vec()));
                } else {
                    slots.push(None);
                }
            }
            units.push(UnitState {
                id: u.id,
                params,
                conv: u.conv,
                hash: HashSpec::new(u.hash_seed, s)?,
                basis: Basis::from_parts(s, slots, u.counters, u.age, u.max_age),
            });
        }
        let net = Self {
            input_hash: HashSpec::new(meta.input_hash_seed, s)?,
            units,
            channels: meta.channels,
            hash_seed: meta.hash_seed,
            init_seed: meta.init_seed,
            next_hash_index: meta.next_hash_index,
            basis_update: meta.basis_update,
            config: meta.config,
        };
        net.config.validate()?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkMeta {
    config: NetworkConfig,
    input_hash_seed: u64,
    channels: usize,
    hash_seed: u64,
    init_seed: u64,
    next_hash_index: u64,
    basis_update: bool,
    units: Vec<UnitMeta>,
}

#[derive(Serialize, Deserialize)]
struct UnitMeta {
    id: usize,
    hash_seed: u64,
    conv: ConvStackSpec,
    counters: Vec<u64>,
    age: u64,
    max_age: u64,
    slots: Vec<bool>,
    params: Vec<(String, String)>,
}

/// Units are chained in any order, so each stack must map `C` channels to `C`.
fn check_conv(conv: &ConvStackSpec) -> Result<usize, HrnError> {
    conv.validate()?;
    if conv.in_channels() != conv.out_channels() {
        return Err(HrnError::Config(format!(
            "unit conv stacks must preserve channels ({} in, {} out)",
            conv.in_channels(),
            conv.out_channels()
        )));
    }
    Ok(conv.in_channels())
}
