//! Editing a patch store in world space: delete, duplicate, relocate and
//! stitch two stores together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, Camera, Pose};
use crate::grid::Mask;
use crate::linalg::{Mat3, Vec3};
use crate::memory::{MemoryError, MemoryPatch, MosaicMemory, PatchId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManipulationError {
    #[error("rotation is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Which patches an edit applies to. Boxes and image regions test the
/// patch centroid.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    Ids(Vec<PatchId>),
    WorldBox { min: Vec3<f64>, max: Vec3<f64> },
    /// Pixel mask in the image of `camera`.
    ImageRegion { camera: Camera<f64>, mask: Mask },
}

impl Selection {
    pub fn all(memory: &MosaicMemory) -> Self {
        Selection::Ids(memory.ids())
    }

    /// Selected ids present in `memory`, ascending.
    pub fn resolve(&self, memory: &MosaicMemory) -> Vec<PatchId> {
        let mut ids: Vec<PatchId> = match self {
            Selection::Ids(ids) => ids.iter().copied().filter(|id| memory.contains(*id)).collect(),
            Selection::WorldBox { min, max } => memory
                .patches()
                .filter(|p| {
                    let c = p.centroid();
                    (min.x..=max.x).contains(&c.x)
                        && (min.y..=max.y).contains(&c.y)
                        && (min.z..=max.z).contains(&c.z)
                })
                .map(|p| p.id)
                .collect(),
            Selection::ImageRegion { camera, mask } => memory
                .patches()
                .filter(|p| {
                    let (c, _) = project(camera, p.centroid());
                    if !c.valid {
                        return false;
                    }
                    let (row, col) = (c.v.floor() as usize, c.u.floor() as usize);
                    row < mask.height && col < mask.width && mask.get(row, col)
                })
                .map(|p| p.id)
                .collect(),
        };
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Similarity transform `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn new(rotation: Mat3<f64>, translation: Vec3<f64>, scale: f64) -> Result<Self, ManipulationError> {
        if !rotation.is_rotation(1e-9) {
            return Err(ManipulationError::NotOrthonormal(rotation.orthonormality_error()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ManipulationError::BadScale(scale));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn translation(t: Vec3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn apply(&self, x: Vec3<f64>) -> Vec3<f64> {
        self.rotation.mul_vec(x) * self.scale + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.mul_vec(other.translation) * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self {
            rotation: rt,
            translation: -(rt.mul_vec(self.translation) * inv_s),
            scale: inv_s,
        }
    }

    /// Camera that sees the transformed world exactly as `camera` saw the
    /// original: extrinsics composed with the inverse transform, camera
    /// frame scaled by `s`. Intrinsics are unchanged.
    pub fn apply_camera(&self, camera: &Camera<f64>) -> Camera<f64> {
        let rc = camera.pose.rotation;
        let rotation = rc * self.rotation.transpose();
        let translation = camera.pose.translation * self.scale - rotation.mul_vec(self.translation);
        Camera::new(
            camera.intrinsics,
            Pose {
                rotation,
                translation,
            },
        )
    }

    /// Transformed copy of `patch` under a new id. World points and depths
    /// move with the transform and the source camera follows, so the copy
    /// still lifts to its own world points.
    pub fn apply_patch(&self, patch: &MemoryPatch, id: PatchId) -> MemoryPatch {
        MemoryPatch {
            id,
            depth: patch.depth.iter().map(|d| d * self.scale).collect(),
            source_camera: self.apply_camera(&patch.source_camera),
            world_points: patch
                .world_points
                .iter()
                .enumerate()
                .map(|(t, x)| if patch.has_depth(t) { self.apply(*x) } else { *x })
                .collect(),
            ..patch.clone()
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Serialize, Deserialize)]
struct TransformJson {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    #[serde(default = "one")]
    s: f64,
}

fn one() -> f64 {
    1.0
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v = self.rotation.to_row_vec();
        let mut r = [0.0; 9];
        r.copy_from_slice(&v);
        TransformJson {
            r,
            t: self.translation.to_array(),
            s: self.scale,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let j = TransformJson::deserialize(deserializer)?;
        RigidTransform::new(
            Mat3::from_row_slice(&j.r),
            Vec3::from_array(j.t),
            j.s,
        )
        .map_err(serde::de::Error::custom)
    }
}

pub fn delete(memory: &MosaicMemory, sel: &Selection) -> MosaicMemory {
    let mut out = memory.clone();
    out.delete_ids(&sel.resolve(memory));
    out
}

/// Adds transformed copies of the selection with fresh ids. Returns the
/// new store and the ids of the copies.
pub fn duplicate(
    memory: &MosaicMemory,
    sel: &Selection,
    xf: &RigidTransform,
) -> Result<(MosaicMemory, Vec<PatchId>), ManipulationError> {
    let mut out = memory.clone();
    let first = memory.next_id();
    let copies: Vec<MemoryPatch> = sel
        .resolve(memory)
        .iter()
        .enumerate()
        .map(|(k, id)| xf.apply_patch(memory.get(*id).expect("resolved id"), PatchId(first + k as u64)))
        .collect();
    let ids = copies.iter().map(|p| p.id).collect();
    out.insert(copies)?;
    Ok((out, ids))
}

/// Duplicate then delete the originals.
pub fn relocate(
    memory: &MosaicMemory,
    sel: &Selection,
    xf: &RigidTransform,
) -> Result<(MosaicMemory, Vec<PatchId>), ManipulationError> {
    let originals = sel.resolve(memory);
    let (mut out, ids) = duplicate(memory, &Selection::Ids(originals.clone()), xf)?;
    out.delete_ids(&originals);
    Ok((out, ids))
}

/// Union of `a` and `xf`-transformed `b`. B's patches are renumbered in
/// their id order starting at `a.next_id()`.
pub fn stitch(
    a: &MosaicMemory,
    b: &MosaicMemory,
    xf: &RigidTransform,
) -> Result<(MosaicMemory, Vec<PatchId>), ManipulationError> {
    let mut out = a.clone();
    let first = a.next_id();
    let moved: Vec<MemoryPatch> = b
        .patches()
        .enumerate()
        .map(|(k, p)| xf.apply_patch(p, PatchId(first + k as u64)))
        .collect();
    let ids = moved.iter().map(|p| p.id).collect();
    out.insert(moved)?;
    Ok((out, ids))
}
