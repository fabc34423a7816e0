//! Tape-based reverse-mode automatic differentiation over dense f64 arrays.
//!
//! Values are computed eagerly as ops are recorded; `backward` replays the
//! tape in reverse topological order (which is just reverse insertion order).
//! The primitive set is exactly what the model's forward graph needs,
//! including a fused Hebbian fast-weight update so memory matrices stay
//! differentiable inside a truncation window without materialising
//! intermediate 400x400 products.
//!
//! Shape mismatches are construction errors and panic with the offending op
//! and shapes; runtime failures (non-scalar loss, non-finite values) are
//! reported through `Result`.

mod adam;
pub mod gradcheck;
mod ops;
mod tape;

#[cfg(test)]
mod tests;

pub use adam::{lr_schedule, AdamState};
pub use tape::{Gradients, Shape, SuffixMask, Tape, TapeError, Var};
