use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::feathash::{HashError, HashedVec};
use crate::ndcompute::{Tape, Tensor, Var};

use super::network::Network;
use super::{HrnError, Mode};

/// One routing level: the unit selected for `hash` and the resulting residue.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteLevel {
    pub unit: usize,
    /// Unit whose hash produced `hash`; `None` for the input hash.
    pub hashed_by: Option<usize>,
    pub hash: HashedVec,
    pub coeffs: Vec<f64>,
    pub residue: Vec<f32>,
    pub residue_norm: f64,
    pub projection_norm: f64,
    /// The unit was empty and got initialized with `hash` on selection.
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteEnd {
    /// All `depth - 1` selections were made.
    DepthLimit,
    /// A residue fell below the stop threshold.
    LowResidue,
    /// No eligible unit was left.
    Exhausted,
    /// A feature map vanished or no longer fit the next unit.
    DegenerateFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteTrace {
    pub levels: Vec<RouteLevel>,
    /// Sum of all level residues.
    pub output: Vec<f32>,
    pub end: RouteEnd,
}

impl RouteTrace {
    pub fn stopped_early(&self) -> bool {
        self.end == RouteEnd::LowResidue
    }

    pub fn unit_ids(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.unit).collect()
    }

    /// `sum_j ||r_j||_1`.
    pub fn residue_l1(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.residue.iter().map(|v| v.abs() as f64).sum::<f64>())
            .sum()
    }
}

/// A route recorded on a tape, ready for backpropagation.
#[derive(Debug)]
pub struct RouteGraph {
    pub trace: RouteTrace,
    pub output: Var,
    pub residues: Vec<Var>,
    /// Units whose conv stack ran, with their bound parameter variables.
    pub applied: Vec<(usize, Vec<Var>)>,
}

trait Selector {
    fn net(&self) -> &Network;
    fn select(&mut self, h: &HashedVec, used: &[usize]) -> Result<Option<(usize, bool)>, HrnError>;
    fn after_projection(&mut self, unit: usize, h: &HashedVec, initialized_now: bool);
}

struct EvalSelector<'a>(&'a Network);

impl Selector for EvalSelector<'_> {
    fn net(&self) -> &Network {
        self.0
    }

    fn select(&mut self, h: &HashedVec, used: &[usize]) -> Result<Option<(usize, bool)>, HrnError> {
        Ok(self.0.best_initialized(h, used).map(|(id, _)| (id, false)))
    }

    fn after_projection(&mut self, _: usize, _: &HashedVec, _: bool) {}
}

struct TrainSelector<'a, R: ?Sized> {
    net: &'a mut Network,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Selector for TrainSelector<'_, R> {
    fn net(&self) -> &Network {
        self.net
    }

    fn select(&mut self, h: &HashedVec, used: &[usize]) -> Result<Option<(usize, bool)>, HrnError> {
        match self.net.select_unit(h, used, self.rng) {
            Ok(sel) => Ok(Some(sel)),
            Err(HrnError::Exhausted) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn after_projection(&mut self, unit: usize, h: &HashedVec, initialized_now: bool) {
        if initialized_now {
            return;
        }
        let config = self.net.config().clone();
        let update = self.net.basis_update;
        let u = self.net.unit_mut(unit).expect("selected unit exists");
        u.expand_basis(h, &config);
        if update {
            u.update_basis(h, &config);
        }
    }
}

impl Network {
    /// Routes one sample. Train mode applies selection, expansion and update
    /// side effects; eval mode is pure.
    pub fn route<R: Rng + ?Sized>(&mut self, x: &Tensor, mode: Mode, rng: &mut R) -> Result<RouteTrace, HrnError> {
        let mut tape = Tape::new();
        Ok(self.route_on_tape(&mut tape, x, mode, rng)?.trace)
    }

    /// Pure routing over initialized units.
    pub fn route_eval(&self, x: &Tensor) -> Result<RouteTrace, HrnError> {
        let mut tape = Tape::new();
        Ok(self.route_eval_on_tape(&mut tape, x)?.trace)
    }

    pub fn route_on_tape<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<RouteGraph, HrnError> {
        match mode {
            Mode::Train => run(&mut TrainSelector { net: self, rng }, tape, x),
            Mode::Eval => run(&mut EvalSelector(self), tape, x),
        }
    }

    pub fn route_eval_on_tape(&self, tape: &mut Tape, x: &Tensor) -> Result<RouteGraph, HrnError> {
        run(&mut EvalSelector(self), tape, x)
    }

    /// Brings a `[C, H, W]` (or `[H, W]`) sample to the units' channel count by
    /// repeating its channels.
    pub fn adapt_input(&self, x: &Tensor) -> Result<Tensor, HrnError> {
        adapt_channels(x, self.channels())
    }
}

pub(crate) fn adapt_channels(x: &Tensor, target: usize) -> Result<Tensor, HrnError> {
    let shape = x.shape();
    let (c, h, w) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => return Err(HrnError::Config(format!("expected a [C, H, W] sample, got {shape:?}"))),
    };
    if c == target {
        return Ok(x.clone().reshape(vec![c, h, w])?);
    }
    if !target.is_multiple_of(c) {
        return Err(HrnError::Config(format!("cannot spread {c} input channels over {target} unit channels")));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(target * plane);
    for k in 0..target {
        let src = k % c;
        data.extend_from_slice(&x.data()[src * plane..(src + 1) * plane]);
    }
    Ok(Tensor::new(vec![target, h, w], data)?)
}

fn run<S: Selector>(sel: &mut S, tape: &mut Tape, x: &Tensor) -> Result<RouteGraph, HrnError> {
    let (depth, stop, s) = {
        let c = sel.net().config();
        (c.depth, c.stop_threshold, c.hash_dim)
    };
    let h0 = match sel.net().input_hash().hash_normalized(x.data()) {
        Ok(h) => h,
        Err(HashError::DegenerateInput) => return Err(HrnError::DegenerateInput),
        Err(e) => return Err(e.into()),
    };
    let mut y = tape.input(sel.net().adapt_input(x)?);
    let mut h = h0;
    let mut h_var = tape.input(Tensor::from_vec(h.values.clone()));
    let mut hashed_by = None;

    let mut used: Vec<usize> = Vec::with_capacity(depth);
    let mut levels = Vec::with_capacity(depth);
    let mut residues = Vec::with_capacity(depth);
    let mut applied = Vec::new();
    let mut end = RouteEnd::DepthLimit;

    for j in 1..depth {
        let Some((unit, initialized)) = sel.select(&h, &used)? else {
            end = RouteEnd::Exhausted;
            break;
        };
        let basis = &sel.net().units()[unit].basis;
        let proj = basis.project(&h.values);
        let r_var = tape.residue(h_var, basis.active_vectors())?;
        let residue = tape.value(r_var).data().to_vec();
        let residue_norm = residue.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        sel.after_projection(unit, &h, initialized);

        used.push(unit);
        residues.push(r_var);
        levels.push(RouteLevel {
            unit,
            hashed_by,
            hash: h.clone(),
            coeffs: proj.coeffs,
            residue,
            residue_norm,
            projection_norm: proj.magnitude,
            initialized,
        });

        if residue_norm < stop {
            end = RouteEnd::LowResidue;
            break;
        }
        if j == depth - 1 {
            // The next feature map would never be hashed or projected.
            break;
        }

        let u = &sel.net().units()[unit];
        let in_shape = tape.value(y).shape();
        let fits = u.conv.output_shape([in_shape[0], in_shape[1], in_shape[2]]).is_some();
        if !fits {
            end = RouteEnd::DegenerateFeatures;
            break;
        }
        let vars = u.params.bind(tape);
        y = u.conv.forward(tape, &vars, y)?;
        applied.push((unit, vars));
        match tape.hash_normalize(y, u.hash) {
            Ok(v) => {
                h_var = v;
                h = HashedVec { values: tape.value(v).data().to_vec(), source_dim: tape.value(y).len() };
                hashed_by = Some(unit);
            }
            Err(HashError::DegenerateInput | HashError::DegenerateHash) => {
                end = RouteEnd::DegenerateFeatures;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let output = match residues.split_first() {
        None => tape.input(Tensor::zeros(&[s])),
        Some((first, rest)) => {
            let mut acc = *first;
            for r in rest {
                acc = tape.add(acc, *r)?;
            }
            acc
        }
    };
    let trace = RouteTrace { levels, output: tape.value(output).data().to_vec(), end };
    Ok(RouteGraph { trace, output, residues, applied })
}

/// Per-level fraction of routes selecting each unit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageRatios {
    /// `levels[k][unit]` = fraction of routes reaching level `k` that chose `unit`.
    pub levels: Vec<BTreeMap<usize, f64>>,
    /// Number of routes reaching each level.
    pub reached: Vec<u64>,
}

impl UsageRatios {
    /// Ratio of `unit` at `level`, zero when unused or unreached.
    pub fn ratio(&self, level: usize, unit: usize) -> f64 {
        self.levels.get(level).and_then(|m| m.get(&unit)).copied().unwrap_or(0.0)
    }

    pub fn from_routes<I, R>(routes: I) -> Result<Self, HrnError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[usize]>,
    {
        let mut counts: Vec<BTreeMap<usize, u64>> = Vec::new();
        let mut any = false;
        for route in routes {
            any = true;
            for (k, unit) in route.as_ref().iter().enumerate() {
                if counts.len() <= k {
                    counts.push(BTreeMap::new());
                }
                *counts[k].entry(*unit).or_default() += 1;
            }
        }
        if !any {
            return Err(HrnError::Config("usage ratios need at least one route".into()));
        }
        let reached: Vec<u64> = counts.iter().map(|m| m.values().sum()).collect();
        let levels = counts
            .iter()
            .zip(&reached)
            .map(|(m, n)| m.iter().map(|(u, c)| (*u, *c as f64 / *n as f64)).collect())
            .collect();
        Ok(Self { levels, reached })
    }
}

pub fn usage_ratios(traces: &[RouteTrace]) -> Result<UsageRatios, HrnError> {
    UsageRatios::from_routes(traces.iter().map(|t| t.unit_ids()))
}
