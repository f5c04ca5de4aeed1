use serde::{Deserialize, Serialize};

use crate::geometry::{project, Camera, Intrinsics, Pose};
use crate::linalg::Vec3;

use super::{SimError, SyntheticScene};

/// Minimum frustum overlap for a recorded revisit pair.
pub const MIN_REVISIT_OVERLAP: f64 = 0.3;

/// World direction shown as image-up: world axes match an identity camera.
const WORLD_UP: [f64; 3] = [0.0, -1.0, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            focal: 256.0,
            width: 256,
            height: 256,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<Intrinsics<f64>, SimError> {
        Ok(Intrinsics::centered(self.focal, self.width, self.height)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Straight line from `start`, looking along `direction`.
    Forward {
        start: [f64; 3],
        direction: [f64; 3],
        step: f64,
        frames: usize,
    },
    /// Circle around the scene centroid, every camera aimed at it.
    Orbit {
        radius: f64,
        #[serde(default)]
        height: f64,
        frames: usize,
    },
    /// Out from `start` to `end` and back along the same path with a fixed
    /// viewing direction; frame `n − 1 − i` repeats the pose of frame `i`.
    RevisitLoop {
        start: [f64; 3],
        end: [f64; 3],
        #[serde(default = "forward")]
        direction: [f64; 3],
        frames: usize,
    },
}

fn forward() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Forward,
    Orbit,
    RevisitLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisitPair {
    pub a: usize,
    pub b: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub cameras: Vec<Camera<f64>>,
    pub revisit_pairs: Vec<RevisitPair>,
}

/// Indices of scene points whose centers project inside the image.
fn visible(scene: &SyntheticScene, cam: &Camera<f64>) -> Vec<bool> {
    scene
        .points
        .iter()
        .map(|p| project(cam, p.position).0.valid)
        .collect()
}

/// Intersection over union of the scene points visible from each camera.
pub fn frustum_overlap(scene: &SyntheticScene, a: &Camera<f64>, b: &Camera<f64>) -> f64 {
    let (va, vb) = (visible(scene, a), visible(scene, b));
    let both = va.iter().zip(&vb).filter(|(x, y)| **x && **y).count();
    let any = va.iter().zip(&vb).filter(|(x, y)| **x || **y).count();
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

fn looking(eye: Vec3<f64>, dir: Vec3<f64>) -> Result<Pose<f64>, SimError> {
    Ok(Pose::look_at(eye, eye + dir, Vec3::from_array(WORLD_UP))?)
}

pub fn generate_trajectory(
    spec: &TrajectorySpec,
    camera: &CameraSpec,
    scene: &SyntheticScene,
) -> Result<Trajectory, SimError> {
    let k = camera.intrinsics()?;
    let frames = match spec {
        TrajectorySpec::Forward { frames, .. }
        | TrajectorySpec::Orbit { frames, .. }
        | TrajectorySpec::RevisitLoop { frames, .. } => *frames,
    };
    if frames == 0 {
        return Err(SimError::InvalidSpec("trajectory needs at least one frame".into()));
    }
    let (kind, poses) = match spec {
        TrajectorySpec::Forward {
            start,
            direction,
            step,
            ..
        } => {
            let d = Vec3::from_array(*direction).normalized();
            let s = Vec3::from_array(*start);
            let poses = (0..frames)
                .map(|i| looking(s + d * (*step * i as f64), d))
                .collect::<Result<Vec<_>, _>>()?;
            (TrajectoryKind::Forward, poses)
        }
        TrajectorySpec::Orbit { radius, height, .. } => {
            if !(*radius > 0.0) {
                return Err(SimError::InvalidSpec("orbit radius must be positive".into()));
            }
            let c = scene.centroid();
            let poses = (0..frames)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / frames as f64;
                    let eye = c + Vec3::new(radius * th.sin(), *height, -radius * th.cos());
                    Ok(Pose::look_at(eye, c, Vec3::from_array(WORLD_UP))?)
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            (TrajectoryKind::Orbit, poses)
        }
        TrajectorySpec::RevisitLoop {
            start,
            end,
            direction,
            ..
        } => {
            let (s, e) = (Vec3::from_array(*start), Vec3::from_array(*end));
            let d = Vec3::from_array(*direction).normalized();
            let half = ((frames - 1) / 2).max(1) as f64;
            let poses = (0..frames)
                .map(|i| {
                    let k = i.min(frames - 1 - i) as f64;
                    looking(s + (e - s) * (k / half), d)
                })
                .collect::<Result<Vec<_>, _>>()?;
            (TrajectoryKind::RevisitLoop, poses)
        }
    };
    let cameras: Vec<Camera<f64>> = poses.into_iter().map(|p| Camera::new(k, p)).collect();
    let mut revisit_pairs = Vec::new();
    if kind == TrajectoryKind::RevisitLoop {
        for a in 0..frames / 2 {
            let b = frames - 1 - a;
            if b <= a + 1 {
                continue;
            }
            let overlap = frustum_overlap(scene, &cameras[a], &cameras[b]);
            if overlap >= MIN_REVISIT_OVERLAP {
                revisit_pairs.push(RevisitPair { a, b, overlap });
            }
        }
        if revisit_pairs.is_empty() {
            return Err(SimError::Overlap(format!(
                "no revisit pair reaches {MIN_REVISIT_OVERLAP} frustum overlap"
            )));
        }
    }
    Ok(Trajectory {
        kind,
        cameras,
        revisit_pairs,
    })
}
