//! Synthetic ground truth: colored point scenes, z-buffered splat
//! rendering, revisiting trajectories and dataset export.

mod dataset;
mod render;
mod scene;
mod trajectory;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::io::IoError;

pub use dataset::{
    correspondences, make_dataset, Dataset, FrameData, FrameFiles, Manifest, RevisitFiles,
    CORRESPONDENCE_DEPTH_TOLERANCE, LATENT_DEPTH_TOLERANCE, MANIFEST,
};
pub use render::{pool_depth, pool_image, render, render_at, RenderedFrame};
pub use scene::{build_scene, ColorPattern, Primitive, ScenePoint, SceneSpec, SyntheticScene};
pub use trajectory::{
    frustum_overlap, generate_trajectory, CameraSpec, RevisitPair, Trajectory, TrajectoryKind,
    TrajectorySpec, MIN_REVISIT_OVERLAP,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{0}")]
    Overlap(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Everything `simulate` needs, as read from a JSON spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub camera: CameraSpec,
    pub trajectory: TrajectorySpec,
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    #[serde(default = "default_temporal")]
    pub temporal_s: usize,
}

fn default_downsample() -> usize {
    8
}

fn default_temporal() -> usize {
    4
}

/// Builds the scene and trajectory described by `spec` and renders the
/// dataset.
pub fn simulate(spec: &SimulationSpec) -> Result<Dataset, SimError> {
    let scene = build_scene(&SceneSpec {
        seed: spec.seed,
        primitives: spec.primitives.clone(),
    })?;
    let trajectory = generate_trajectory(&spec.trajectory, &spec.camera, &scene)?;
    make_dataset(&scene, &trajectory, spec.downsample, spec.temporal_s)
}
