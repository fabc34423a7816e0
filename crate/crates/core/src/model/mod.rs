//! The hierarchical generative and inference networks: grid transitions,
//! sensory compression and smoothing, the conjunctive place code, the
//! decoder, and precision-weighted fusion of path-integrated and
//! memory-derived grid estimates.
//!
//! Everything here is a pure function of `(params, state)` expressed as tape
//! operations; the trainer owns the loop, the losses' bookkeeping, and the
//! optimiser.

mod ops;
mod params;
mod step;

pub use ops::{
    combine_precision, compress, conjunction, decode, grid_drive, grid_transition,
    grid_transition_generative, mem_to_grid, normalize_band, sensory_broadcast, sigma_mem,
    sigma_path, sigma_place, smooth_band, stimulus_pair, MemReadout,
};
pub use params::{Hyperparams, Mlp, MlpVars, ModelParams, ModelVars};
pub use step::{step, LossVars, StateSnapshot, StepInputs, StepOutput, StepState};
