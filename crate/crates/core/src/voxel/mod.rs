//! Occupancy volumes, mesh ingestion/voxelization, and reconstruction metrics.

mod grid;
mod mesh;
mod metrics;

pub use grid::{binarize, read_voxels, write_voxels, ProbGrid, VoxelGrid, VOX_MAGIC};
pub use mesh::{cubes_to_obj, normalize_mesh, parse_obj, voxelize, TriMesh};
pub use metrics::{fscore, iou, voxel_to_points, PointSet};

use thiserror::Error;

/// Default probability cut-off used for IoU.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
/// Default F-Score distance, as a fraction of the unit cube side.
pub const DEFAULT_FSCORE_DISTANCE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: vertex index {index} out of range (have {count} vertices)")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        count: usize,
    },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("mesh bounding box has zero extent")]
    DegenerateExtent,
    #[error("resolution must be positive")]
    ResolutionZero,
    #[error("threshold {0} must lie strictly between 0 and 1")]
    ThresholdOutOfRange(f64),
    #[error("resolution mismatch: {0} vs {1}")]
    ResolutionMismatch(usize, usize),
    #[error("distance {0} must lie in (0, 1]")]
    NonPositiveDistance(f64),
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("malformed voxel file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
