//! Uniform voxel grid over patch world points with conservative frustum
//! culling.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::Camera;
use crate::linalg::Vec3;

use super::{MemoryPatch, PatchId};

pub type VoxelKey = [i64; 3];

/// Points beyond this count are subsampled when estimating spacing.
const SPACING_SAMPLE: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialIndex {
    voxel_size: f64,
    cells: BTreeMap<VoxelKey, BTreeSet<PatchId>>,
}

impl SpatialIndex {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            cells: BTreeMap::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key(&self, p: Vec3<f64>) -> VoxelKey {
        let s = self.voxel_size;
        [
            (p.x / s).floor() as i64,
            (p.y / s).floor() as i64,
            (p.z / s).floor() as i64,
        ]
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&BTreeSet<PatchId>> {
        self.cells.get(key)
    }

    pub fn insert(&mut self, patch: &MemoryPatch) {
        for w in patch.lifted_points() {
            let k = self.key(w);
            self.cells.entry(k).or_default().insert(patch.id);
        }
    }

    pub fn remove(&mut self, patch: &MemoryPatch) {
        for w in patch.lifted_points() {
            let k = self.key(w);
            if let Some(ids) = self.cells.get_mut(&k) {
                ids.remove(&patch.id);
                if ids.is_empty() {
                    self.cells.remove(&k);
                }
            }
        }
    }

    /// True when each of the patch's points is registered in its voxel.
    pub fn covers(&self, patch: &MemoryPatch) -> bool {
        patch.lifted_points().all(|w| {
            self.cells
                .get(&self.key(w))
                .is_some_and(|ids| ids.contains(&patch.id))
        })
    }

    /// Ids in every voxel whose box is not provably outside the query
    /// frustum.
    pub fn frustum_candidates(&self, query: &Camera<f64>) -> BTreeSet<PatchId> {
        let planes = frustum_planes(query);
        let s = self.voxel_size;
        let pad = s * 1e-9;
        let mut out = BTreeSet::new();
        for (key, ids) in &self.cells {
            let lo = Vec3::new(key[0] as f64 * s - pad, key[1] as f64 * s - pad, key[2] as f64 * s - pad);
            let hi = Vec3::new(
                (key[0] + 1) as f64 * s + pad,
                (key[1] + 1) as f64 * s + pad,
                (key[2] + 1) as f64 * s + pad,
            );
            if planes.iter().all(|pl| pl.box_may_intersect(lo, hi)) {
                out.extend(ids.iter().copied());
            }
        }
        out
    }
}

/// Half-space `n · x + d ≥ 0` in world coordinates.
#[derive(Clone, Copy, Debug)]
struct Plane {
    normal: Vec3<f64>,
    offset: f64,
}

impl Plane {
    /// False only when every corner of the box lies strictly outside.
    fn box_may_intersect(&self, lo: Vec3<f64>, hi: Vec3<f64>) -> bool {
        // corner maximizing n·x
        let c = Vec3::new(
            if self.normal.x >= 0.0 { hi.x } else { lo.x },
            if self.normal.y >= 0.0 { hi.y } else { lo.y },
            if self.normal.z >= 0.0 { hi.z } else { lo.z },
        );
        let value = self.normal.dot(c) + self.offset;
        let slack = 1e-12 * (self.normal.norm() * c.norm() + self.offset.abs());
        value >= -slack
    }
}

/// Five planes through the camera center bounding `z > 0` and the image
/// rectangle.
fn frustum_planes(camera: &Camera<f64>) -> [Plane; 5] {
    let k = &camera.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let cam_planes = [
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(k.fx, 0.0, k.cx),
        Vec3::new(-k.fx, 0.0, w - k.cx),
        Vec3::new(0.0, k.fy, k.cy),
        Vec3::new(0.0, -k.fy, h - k.cy),
    ];
    let rt = camera.pose.rotation.transpose();
    cam_planes.map(|n| Plane {
        normal: rt.mul_vec(n),
        offset: n.dot(camera.pose.translation),
    })
}

/// Median over points of the distance to their nearest other point.
/// Falls back to 1.0 for degenerate inputs.
pub fn median_nearest_neighbor_spacing(points: &[Vec3<f64>]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let stride = points.len().div_ceil(SPACING_SAMPLE);
    let mut spacings: Vec<f64> = points
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, q)| j != i && (*q - *p).norm() > 0.0)
                .map(|(_, q)| (*q - *p).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .collect();
    if spacings.is_empty() {
        return 1.0;
    }
    spacings.sort_by(|a, b| a.partial_cmp(b).expect("finite spacing"));
    let m = spacings[spacings.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}
