//! Dense tensors, reverse-mode autodiff, seeded RNG and the AdamW optimizer.

pub mod adamw;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
