//! Hash-routed convolutional networks.
//!
//! A network is a pool of convolutional units. Each input is routed through
//! a data-dependent chain of units: intermediate feature maps are hashed to a
//! fixed dimension and projected onto every unit's orthonormal basis, and the
//! unit with the largest projection runs next. The network output is the sum
//! of the projection residues along the route.
//!
//! - [`feathash`]: seeded feature hashing and its statistical checks
//! - [`ndcompute`]: tensors, reverse-mode differentiation, SGD, checkpoints
//! - [`hrncore`]: bases, units, routing, online basis expansion and update
//! - [`contlearn`]: continual-learning training and evaluation protocol
//! - [`dataio`]: IDX datasets and task sequences

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod feathash;
pub mod ndcompute;
pub mod hrncore;
pub mod seeding;
pub mod contlearn;
pub mod dataio;
