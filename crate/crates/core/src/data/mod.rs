//! Synthetic shapes, depth renders, the binary dataset container and PGM
//! image I/O.

pub mod container;
pub mod pgm;
pub mod render;
pub mod shapes;

pub use container::{read_dataset, write_dataset, DatasetRecord, Split};
pub use render::{render_depth, ViewSpec, NUM_VIEWS};
pub use shapes::{generate_shape, Pose, Primitive, ShapeKind, ShapeSpec};

use crate::error::Result;
use crate::{PointCloud, SeededRng};

/// A synthetic record: sampled, normalized cloud plus its 24 renders.
pub fn make_record(
    id: u64,
    spec: &ShapeSpec,
    n_points: usize,
    resolution: usize,
    rng: &mut SeededRng,
) -> Result<DatasetRecord> {
    let cloud: PointCloud<f32> = generate_shape(spec, n_points, rng)?;
    let views = render::render_views(&cloud, resolution)?;
    Ok(DatasetRecord {
        id,
        category: spec.kind().category(),
        cloud,
        views,
    })
}
