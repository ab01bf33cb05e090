//! Orthographic z-buffered depth renders of point clouds.
//!
//! World frame is z-up. A view first turns the cloud by the azimuth about z,
//! then looks at it from the given elevation. Image x is the rotated x axis,
//! image up is `(0, sin e, cos e)` and the direction toward the camera is
//! `(0, −cos e, sin e)`. With orthographic scale `σ`, a point with image
//! coordinates `(u, w)` lands in column `⌊(σu + 1)/2 · W⌋` and row
//! `⌊(1 − (σw + 1)/2) · H⌋`, clamped to the image. Occupied pixels store
//! `0.1 + 0.9 · (σ·depth + 1)/2` (nearest point wins), so they are always
//! distinguishable from empty pixels, which are exactly 0.

use crate::error::{contract, Result};
use crate::{ImageTensor, PointCloud, Scalar};

pub const NUM_VIEWS: usize = 24;
pub const DEFAULT_ELEVATION_DEG: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub scale: f64,
}

impl ViewSpec {
    /// One of the 24 canonical views: azimuth `15°·index`, elevation 30°.
    pub fn canonical(index: usize) -> Result<Self> {
        if index >= NUM_VIEWS {
            return Err(contract(format!("view index {index} outside 0..{NUM_VIEWS}")));
        }
        Ok(Self {
            azimuth_deg: 15.0 * index as f64,
            elevation_deg: DEFAULT_ELEVATION_DEG,
            scale: 1.0,
        })
    }
}

pub fn render_depth<T: Scalar>(cloud: &PointCloud<T>, view: &ViewSpec, resolution: usize) -> Result<ImageTensor<T>> {
    if resolution == 0 {
        return Err(contract("resolution must be positive"));
    }
    let az = view.azimuth_deg.rem_euclid(360.0).to_radians();
    let el = view.elevation_deg.to_radians();
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    let res = resolution as f64;
    let mut depth = vec![f64::NEG_INFINITY; resolution * resolution];
    for p in cloud.points() {
        let (x, y, z) = (p[0].to_f64c(), p[1].to_f64c(), p[2].to_f64c());
        let u = x * ca + y * sa;
        let v = -x * sa + y * ca;
        let up = z * ce + v * se;
        let toward = z * se - v * ce;
        let col = (((view.scale * u + 1.0) / 2.0 * res).floor()).clamp(0.0, res - 1.0) as usize;
        let row = (((1.0 - (view.scale * up + 1.0) / 2.0) * res).floor()).clamp(0.0, res - 1.0) as usize;
        let d = &mut depth[row * resolution + col];
        if toward > *d {
            *d = toward;
        }
    }
    let pixels = depth
        .into_iter()
        .map(|d| {
            if d == f64::NEG_INFINITY {
                T::zero()
            } else {
                T::of((0.1 + 0.9 * (view.scale * d + 1.0) / 2.0).clamp(0.1, 1.0))
            }
        })
        .collect();
    ImageTensor::new(resolution, resolution, 1, pixels)
}

/// All 24 canonical renders.
pub fn render_views<T: Scalar>(cloud: &PointCloud<T>, resolution: usize) -> Result<Vec<ImageTensor<T>>> {
    (0..NUM_VIEWS)
        .map(|i| render_depth(cloud, &ViewSpec::canonical(i)?, resolution))
        .collect()
}
