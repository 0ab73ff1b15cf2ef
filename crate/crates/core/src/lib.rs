//! Desk-scale workbench for locating, quantifying, and steering output-length
//! information inside a small decoder-only transformer.
//!
//! The pipeline runs end to end in this crate:
//!
//! 1. [`corpus`] generates a synthetic token-compression task with three
//!    prompt families that state increasing amounts of length information.
//! 2. [`model`] trains a pre-norm decoder transformer whose per-layer
//!    activations are readable at four tap points and steerable at two.
//! 3. [`capture`] records tap activations during generation, labeling each
//!    vector with its generation time step.
//! 4. [`probe`] regresses the time step from those activations, scores the
//!    layer × tap grid, and ranks individual hidden units.
//! 5. [`intervene`] scales ranked units during generation and sweeps
//!    scale × selection grids.
//! 6. [`metrics`] evaluates outputs with compression-ratio deltas and Rouge-L.

pub mod capture;
pub mod corpus;
pub mod error;
pub mod hashing;
pub mod intervene;
pub mod math;
pub mod metrics;
pub mod model;
pub mod par;
pub mod probe;
pub mod rng;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{TokenId, TokenSequence, Vocab};
