//! The patch store: lifting latent frames into 3D patches, a voxel index
//! over their world points, and view-dependent retrieval.

mod compose;
mod index;
mod retrieve;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{back_project, Camera, GeometryError, PixelCoord};
use crate::grid::Grid;
use crate::linalg::Vec3;

pub use compose::{compose_mosaic, Mosaic};
pub use index::{median_nearest_neighbor_spacing, SpatialIndex, VoxelKey};
pub use retrieve::{
    first_frame_footprint, retrieve, retrieve_linear_scan, RetrievalMode, RetrievalParams,
    RetrievedPatch,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-positive depth {depth} at latent token ({row}, {col})")]
    NonPositiveDepth { row: usize, col: usize, depth: f64 },
    #[error("duplicate patch id {0}")]
    DuplicateId(u64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatchId(pub u64);

impl std::fmt::Display for PatchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Latent-grid coordinate of a patch's top-left token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RopeOrigin {
    pub t: usize,
    pub row: usize,
    pub col: usize,
}

/// VAE compression factors between pixels/frames and latent tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentScale {
    pub spatial: usize,
    pub temporal: usize,
}

impl Default for LatentScale {
    fn default() -> Self {
        Self {
            spatial: 8,
            temporal: 4,
        }
    }
}

/// Token center in pixels for latent index `i` (same formula for rows and
/// columns): latent token `i` covers pixels `[i·f, (i+1)·f)`.
#[inline]
pub fn latent_to_pixel(i: f64, downsample: usize) -> f64 {
    (i + 0.5) * downsample as f64
}

/// Inverse of [`latent_to_pixel`]; fractional results are kept.
#[inline]
pub fn pixel_to_latent(x: f64, downsample: usize) -> f64 {
    x / downsample as f64 - 0.5
}

/// A `p × p` block of latent tokens lifted into 3D.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryPatch {
    pub id: PatchId,
    pub size: usize,
    pub channels: usize,
    /// `(p, p, c)` row-major.
    pub latent: Vec<f32>,
    /// `(p, p)` per-token z-depth in the source camera.
    pub depth: Vec<f64>,
    pub source_camera: Camera<f64>,
    pub source_time: usize,
    pub rope_origin: RopeOrigin,
    /// Pixels per latent token in the source camera.
    pub downsample: usize,
    /// `(p, p)` lifted token centers.
    pub world_points: Vec<Vec3<f64>>,
}

impl MemoryPatch {
    pub fn token_count(&self) -> usize {
        self.size * self.size
    }

    /// Latent `(col, row)` of token `(r, s)` in its source frame.
    pub fn token_latent(&self, r: usize, s: usize) -> (usize, usize) {
        (self.rope_origin.col + s, self.rope_origin.row + r)
    }

    /// Pixel-space token center `(u, v)` in the source camera.
    pub fn token_pixel(&self, r: usize, s: usize) -> PixelCoord<f64> {
        let (col, row) = self.token_latent(r, s);
        PixelCoord::new(
            latent_to_pixel(col as f64, self.downsample),
            latent_to_pixel(row as f64, self.downsample),
        )
    }

    pub fn token_latent_values(&self, token: usize) -> &[f32] {
        &self.latent[token * self.channels..(token + 1) * self.channels]
    }

    /// False for tokens kept without a usable depth; their depth and world
    /// point are infinite and they never project.
    pub fn has_depth(&self, token: usize) -> bool {
        let d = self.depth[token];
        d > 0.0 && d.is_finite()
    }

    /// World points of tokens with depth.
    pub fn lifted_points(&self) -> impl Iterator<Item = Vec3<f64>> + '_ {
        (0..self.token_count())
            .filter(|&t| self.has_depth(t))
            .map(|t| self.world_points[t])
    }

    pub fn centroid(&self) -> Vec3<f64> {
        let (sum, n) = self
            .lifted_points()
            .fold((Vec3::zeros(), 0usize), |(acc, n), p| (acc + p, n + 1));
        sum * (1.0 / n as f64)
    }

    /// Recomputes the lifted points from camera, pixels and depths.
    pub fn relift(&mut self) -> Result<(), GeometryError> {
        let mut pts = Vec::with_capacity(self.token_count());
        for r in 0..self.size {
            for s in 0..self.size {
                let t = r * self.size + s;
                if !self.has_depth(t) {
                    pts.push(Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY));
                    continue;
                }
                pts.push(back_project(&self.source_camera, self.token_pixel(r, s), self.depth[t])?);
            }
        }
        self.world_points = pts;
        Ok(())
    }

    /// Largest distance between a stored world point and the point its
    /// token lifts to.
    pub fn lift_consistency_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.size {
            for s in 0..self.size {
                let t = r * self.size + s;
                if !self.has_depth(t) {
                    continue;
                }
                match back_project(&self.source_camera, self.token_pixel(r, s), self.depth[t]) {
                    Ok(p) => worst = worst.max((p - self.world_points[t]).norm()),
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        worst
    }
}

/// Input for [`lift_frame`].
#[derive(Clone, Copy, Debug)]
pub struct FrameToLift<'a> {
    /// `(H, W, c)` latent plane.
    pub latent: &'a Grid<f32>,
    /// `(H, W)` depth at latent resolution.
    pub depth: &'a Grid<f64>,
    /// Pixel-space camera; its image is `(H·f, W·f)`.
    pub camera: &'a Camera<f64>,
    pub time: usize,
    pub patch_size: usize,
    pub downsample: usize,
}

impl FrameToLift<'_> {
    fn check(&self) -> Result<(), MemoryError> {
        let (l, d, p, f) = (self.latent, self.depth, self.patch_size, self.downsample);
        let mismatch = |m: String| Err(MemoryError::DimensionMismatch(m));
        if p == 0 || f == 0 || l.channels == 0 {
            return mismatch("patch size, downsample and channels must be >= 1".into());
        }
        if d.channels != 1 || d.height != l.height || d.width != l.width {
            return mismatch(format!(
                "depth {}x{}x{} vs latent {}x{}",
                d.height, d.width, d.channels, l.height, l.width
            ));
        }
        if l.height % p != 0 || l.width % p != 0 {
            return mismatch(format!(
                "latent {}x{} not divisible by patch size {p}",
                l.height, l.width
            ));
        }
        if l.height * f != self.camera.height() || l.width * f != self.camera.width() {
            return mismatch(format!(
                "latent {}x{} times downsample {f} does not match camera {}x{}",
                l.height,
                l.width,
                self.camera.height(),
                self.camera.width()
            ));
        }
        Ok(())
    }

    /// With `allow_missing`, tokens without usable depth are kept as
    /// depthless and `None` is returned only when no token has depth.
    fn build_patch(
        &self,
        id: PatchId,
        row0: usize,
        col0: usize,
        allow_missing: bool,
    ) -> Result<Option<MemoryPatch>, MemoryError> {
        let p = self.patch_size;
        let c = self.latent.channels;
        let mut latent = Vec::with_capacity(p * p * c);
        let mut depth = Vec::with_capacity(p * p);
        for r in 0..p {
            for s in 0..p {
                latent.extend_from_slice(self.latent.pixel(row0 + r, col0 + s));
                let d = *self.depth.at(row0 + r, col0 + s, 0);
                if !(d > 0.0 && d.is_finite()) {
                    if !allow_missing {
                        return Err(MemoryError::NonPositiveDepth {
                            row: row0 + r,
                            col: col0 + s,
                            depth: d,
                        });
                    }
                    depth.push(f64::INFINITY);
                    continue;
                }
                depth.push(d);
            }
        }
        if depth.iter().all(|d| d.is_infinite()) {
            return Ok(None);
        }
        let mut patch = MemoryPatch {
            id,
            size: p,
            channels: c,
            latent,
            depth,
            source_camera: *self.camera,
            source_time: self.time,
            rope_origin: RopeOrigin {
                t: self.time,
                row: row0,
                col: col0,
            },
            downsample: self.downsample,
            world_points: Vec::new(),
        };
        patch.relift()?;
        Ok(Some(patch))
    }
}

/// Tiles a latent frame into `p × p` patches (row-major over the patch
/// grid) and lifts every token into world space. Ids start at `first_id`.
pub fn lift_frame(frame: &FrameToLift<'_>, first_id: u64) -> Result<Vec<MemoryPatch>, MemoryError> {
    frame.check()?;
    let p = frame.patch_size;
    let mut out = Vec::new();
    let mut next = first_id;
    for row0 in (0..frame.latent.height).step_by(p) {
        for col0 in (0..frame.latent.width).step_by(p) {
            if let Some(patch) = frame.build_patch(PatchId(next), row0, col0, false)? {
                out.push(patch);
                next += 1;
            }
        }
    }
    Ok(out)
}

/// Like [`lift_frame`] but tolerates tokens without a usable depth
/// (background, depth discontinuities): they are stored depthless and never
/// retrieved. Patches with no usable token are dropped and ids are
/// consecutive over the kept patches.
pub fn lift_frame_partial(
    frame: &FrameToLift<'_>,
    first_id: u64,
) -> Result<Vec<MemoryPatch>, MemoryError> {
    frame.check()?;
    let p = frame.patch_size;
    let mut out = Vec::new();
    let mut next = first_id;
    for row0 in (0..frame.latent.height).step_by(p) {
        for col0 in (0..frame.latent.width).step_by(p) {
            if let Some(patch) = frame.build_patch(PatchId(next), row0, col0, true)? {
                out.push(patch);
                next += 1;
            }
        }
    }
    Ok(out)
}

/// Spatially indexed patch collection.
///
/// Equality compares stored patches, the index and the voxel size; the id
/// counter is ignored.
#[derive(Clone, Debug, Default)]
pub struct MosaicMemory {
    patches: BTreeMap<PatchId, MemoryPatch>,
    index: Option<SpatialIndex>,
    next_id: u64,
}

impl PartialEq for MosaicMemory {
    fn eq(&self, other: &Self) -> bool {
        self.patches == other.patches && self.index == other.index
    }
}

impl MosaicMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store whose index uses a fixed voxel size instead of the data-driven
    /// default.
    pub fn with_voxel_size(voxel_size: f64) -> Result<Self, MemoryError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(MemoryError::InvalidParameter(format!(
                "voxel size {voxel_size}"
            )));
        }
        Ok(Self {
            patches: BTreeMap::new(),
            index: Some(SpatialIndex::new(voxel_size)),
            next_id: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn voxel_size(&self) -> Option<f64> {
        self.index.as_ref().map(|i| i.voxel_size())
    }

    pub fn index(&self) -> Option<&SpatialIndex> {
        self.index.as_ref()
    }

    pub fn get(&self, id: PatchId) -> Option<&MemoryPatch> {
        self.patches.get(&id)
    }

    pub fn contains(&self, id: PatchId) -> bool {
        self.patches.contains_key(&id)
    }

    /// Patches in ascending id order.
    pub fn patches(&self) -> impl Iterator<Item = &MemoryPatch> {
        self.patches.values()
    }

    pub fn ids(&self) -> Vec<PatchId> {
        self.patches.keys().copied().collect()
    }

    /// Pixels-per-token shared by every stored patch.
    pub fn downsample(&self) -> Option<usize> {
        self.patches.values().next().map(|p| p.downsample)
    }

    /// Restores the id counter (used when reloading a serialized store).
    pub fn set_next_id(&mut self, next: u64) {
        self.next_id = self.next_id.max(next);
    }

    /// Adds patches; all ids must be new. The first non-empty insert fixes
    /// the voxel size to the median nearest-neighbor spacing of its points
    /// unless one was configured.
    pub fn insert(&mut self, patches: Vec<MemoryPatch>) -> Result<(), MemoryError> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &patches {
            if self.patches.contains_key(&p.id) || !seen.insert(p.id) {
                return Err(MemoryError::DuplicateId(p.id.0));
            }
            if p.depth.len() != p.token_count()
                || p.world_points.len() != p.token_count()
                || p.latent.len() != p.token_count() * p.channels
            {
                return Err(MemoryError::DimensionMismatch(format!(
                    "patch {} storage does not match size {}",
                    p.id, p.size
                )));
            }
            if let Some(f) = self.downsample() {
                if p.downsample != f {
                    return Err(MemoryError::DimensionMismatch(format!(
                        "patch {} downsample {} differs from store downsample {f}",
                        p.id, p.downsample
                    )));
                }
            }
            if patches[0].downsample != p.downsample {
                return Err(MemoryError::DimensionMismatch(
                    "mixed downsample factors in one insert".into(),
                ));
            }
        }
        if patches.is_empty() {
            return Ok(());
        }
        let index = self.index.get_or_insert_with(|| {
            let pts: Vec<Vec3<f64>> = patches
                .iter()
                .flat_map(|p| p.lifted_points())
                .collect();
            SpatialIndex::new(median_nearest_neighbor_spacing(&pts))
        });
        for p in patches {
            index.insert(&p);
            self.next_id = self.next_id.max(p.id.0 + 1);
            self.patches.insert(p.id, p);
        }
        Ok(())
    }

    /// Removes the given ids; absent ids are ignored. Returns how many
    /// patches were removed.
    pub fn delete_ids(&mut self, ids: &[PatchId]) -> usize {
        let mut removed = 0;
        for id in ids {
            if let Some(p) = self.patches.remove(id) {
                if let Some(index) = self.index.as_mut() {
                    index.remove(&p);
                }
                removed += 1;
            }
        }
        removed
    }

    /// Ids of patches that may have tokens inside the query frustum, from
    /// the voxel index. Always a superset of [`Self::linear_scan_visible`].
    pub fn candidate_patches(&self, query: &Camera<f64>) -> Vec<PatchId> {
        match &self.index {
            Some(index) => index.frustum_candidates(query).into_iter().collect(),
            None => Vec::new(),
        }
    }

    /// Ids of patches with at least one token projecting inside the query
    /// image, by brute force.
    pub fn linear_scan_visible(&self, query: &Camera<f64>) -> Vec<PatchId> {
        self.patches
            .values()
            .filter(|p| {
                p.lifted_points()
                    .any(|w| crate::geometry::project(query, w).0.valid)
            })
            .map(|p| p.id)
            .collect()
    }
}
