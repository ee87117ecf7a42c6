//! Units, orthonormal bases and the routing lifecycle: hash-routed
//! inference, unit selection and initialization, basis expansion, and the
//! aging-based basis update.

mod basis;
mod network;
mod route;
mod tracelog;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feathash::HashError;
use crate::ndcompute::NdError;

pub use basis::{Basis, ExpandOutcome, Projection, UpdateOutcome, DEGENERATE_RESIDUE};
pub use network::{Network, UnitState};
pub(crate) use route::adapt_channels;
pub use route::{usage_ratios, RouteEnd, RouteGraph, RouteLevel, RouteTrace, UsageRatios};
pub use tracelog::{parse_trace_log, LevelRecord, TraceLogError, TraceRecord};

#[derive(Debug, Error)]
pub enum HrnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: all-zero sample")]
    DegenerateInput,
    #[error("every unit is already used on this route")]
    Exhausted,
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Selection may initialize units; bases expand and age.
    Train,
    /// Pure argmax routing over initialized units; no state changes.
    Eval,
}

/// Routing hyperparameters shared by all units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_units: usize,
    /// Maximum route levels; at most `depth - 1` unit selections.
    pub depth: usize,
    /// Hashed feature dimension `s`.
    pub hash_dim: usize,
    /// Basis capacity `m`.
    pub basis_capacity: usize,
    /// Routing stops once a residue norm falls strictly below this.
    pub stop_threshold: f64,
    /// Minimum projection magnitude to prefer an initialized unit over an empty one.
    pub empty_threshold: f64,
    /// Bases expand when the projection magnitude is strictly below this.
    pub expand_threshold: f64,
    /// Geometric growth of the maximum age (> 1).
    pub aging_rate: f64,
    pub initial_max_age: u64,
    /// Weight of the residue l1 penalty.
    pub sparsity_weight: f64,
    pub learning_rate: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), HrnError> {
        let fail = |m: String| Err(HrnError::Config(m));
        if self.num_units == 0 {
            return fail("num_units must be at least 1".into());
        }
        if self.depth < 2 {
            return fail(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.depth - 1 > self.num_units {
            return fail(format!(
                "depth {} needs at least {} units, got {}",
                self.depth,
                self.depth - 1,
                self.num_units
            ));
        }
        if self.hash_dim == 0 || self.basis_capacity == 0 {
            return fail("hash_dim and basis_capacity must be positive".into());
        }
        if self.basis_capacity >= self.hash_dim {
            return fail(format!(
                "basis_capacity ({}) must be smaller than hash_dim ({})",
                self.basis_capacity, self.hash_dim
            ));
        }
        if !(self.stop_threshold >= 0.0) {
            return fail("stop_threshold must be non-negative".into());
        }
        if !self.empty_threshold.is_finite() || !self.expand_threshold.is_finite() {
            return fail("empty_threshold and expand_threshold must be finite".into());
        }
        if !(self.aging_rate > 1.0) || !self.aging_rate.is_finite() {
            return fail(format!("aging_rate must exceed 1, got {}", self.aging_rate));
        }
        if self.initial_max_age == 0 {
            return fail("initial_max_age must be positive".into());
        }
        if !(self.sparsity_weight >= 0.0) {
            return fail("sparsity_weight must be non-negative".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive".into());
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    /// Desk-scale defaults for 28x28 grayscale tasks.
    fn default() -> Self {
        Self {
            num_units: 4,
            depth: 3,
            hash_dim: 256,
            basis_capacity: 64,
            stop_threshold: 0.05,
            empty_threshold: 0.6,
            expand_threshold: 0.4,
            aging_rate: 1.2,
            initial_max_age: 50,
            sparsity_weight: 0.01,
            learning_rate: 0.1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        assert!(NetworkConfig::default().validate().is_ok());
        let bad = [
            NetworkConfig { basis_capacity: 256, ..Default::default() },
            NetworkConfig { depth: 6, ..Default::default() },
            NetworkConfig { depth: 1, ..Default::default() },
            NetworkConfig { aging_rate: 1.0, ..Default::default() },
            NetworkConfig { sparsity_weight: -0.1, ..Default::default() },
            NetworkConfig { learning_rate: 0.0, ..Default::default() },
            NetworkConfig { initial_max_age: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(HrnError::Config(_))), "{c:?}");
        }
        assert!(NetworkConfig { depth: 5, ..Default::default() }.validate().is_ok());
    }
}

#[cfg(test)]
mod network_tests;
