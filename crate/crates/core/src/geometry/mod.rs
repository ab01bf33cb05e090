//! Point-cloud primitives: normalization, farthest point sampling, KNN
//! patches, Chamfer distance and F-score.

pub mod cloud;
pub mod metrics;
pub mod sampling;
