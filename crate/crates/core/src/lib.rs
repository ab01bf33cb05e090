//! Transformer-based denoising diffusion for point-cloud reconstruction from
//! images.
//!
//! All numerical code is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks). The aliases at the bottom of this file name the
//! concrete instantiations used by the command-line driver.

pub mod backbone;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use numerics::adamw::{AdamW, AdamWConfig};
pub use numerics::params::ParamStore;
pub use numerics::rng::SeededRng;
pub use numerics::tape::{Tape, Var};
pub use numerics::tensor::Tensor;

pub use geometry::cloud::PointCloud;
pub use geometry::metrics::MetricConfig;
pub use geometry::sampling::PatchSet;

pub use backbone::BackboneConfig;
pub use diffusion::{DiffusionConfig, NoiseSchedule};
pub use model::{Model, ModelConfig};
pub use vision::{Aggregation, ImageTensor, VisionConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type PointCloud64 = PointCloud<f64>;
pub type ImageTensor32 = ImageTensor<f32>;
