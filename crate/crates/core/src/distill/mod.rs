//! The distillation engine: inner unrolls, meta-gradients, EMA smoothing and
//! the phased outer loop.

mod baseline;
mod ema;
mod engine;
mod meta;
mod unroll;

#[cfg(test)]
pub(crate) mod fixtures;

pub use baseline::lors_baseline;
pub use ema::ema_update;
pub use engine::{
    distill_all, distill_phase, initial_subsets, IterationRecord, OuterOptimizer, PhaseResult, CLIP_FACTOR, LR_FLOOR,
};
pub use meta::{matching_loss, meta_gradient, meta_gradient_from_tape, MetaGradient, SimilarityGrad};
pub use unroll::{inner_batches, inner_unroll, InnerSpec, UnrollTape};
