//! Hierarchical grid codes with fast Hebbian memory on graph worlds.
//!
//! An agent walks on square 4-connected lattices where every vertex carries a
//! (non-unique) sensory identity. A hierarchical recurrent network path-integrates
//! a structural "grid" code, binds it conjunctively with a smoothed sensory code
//! into "place" units, and stores those conjunctions in fast Hebbian weight
//! matrices read out through an attractor network. Training is unsupervised,
//! by sensory prediction, with truncated backpropagation through time over a
//! tape-based reverse-mode autodiff engine built for this model.
//!
//! The crate also ships the evaluation side: behavioral curves (one-shot recall,
//! zero-shot link inference, long-range retention), spatial rate maps with
//! autocorrelograms and grid scores, and a remapping analysis pipeline
//! (ideal-grid fits, gridAtPlace / minDist pair measures, shuffle nulls).

pub mod autodiff;
pub mod checkpoint;
pub mod evalmetrics;
pub mod hebbmem;
pub mod model;
pub mod optim;
pub mod remapanalysis;
pub mod stats;
pub mod trainer;
pub mod worldgen;

pub use autodiff::{Shape, Tape, Var};
pub use worldgen::{Action, Environment, Step, WalkPolicy};
