//! View-dependent retrieval with frustum culling and a per-token z-buffer
//! at query-latent resolution.

use crate::geometry::Camera;
use crate::grid::Mask;
use crate::warping::{warp_rope_coords, RopeCoord};

use super::{MemoryError, MemoryPatch, MosaicMemory, PatchId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetrievalMode {
    Dense,
    /// Keeps patches with `(grid_row + grid_col + source_time) % stride == 0`
    /// over each source frame's patch grid.
    Sparse { stride: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalParams {
    pub mode: RetrievalMode,
    /// Minimum fraction of surviving tokens for a patch to be returned.
    pub occlusion_threshold: f64,
    /// Relative z-buffer tolerance: a token survives when its depth is at
    /// most `nearest · (1 + depth_tolerance)`.
    pub depth_tolerance: f64,
    pub max_patches: Option<usize>,
    /// Query-image pixel mask; tokens landing inside it are masked.
    pub skip_region: Option<Mask>,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Dense,
            occlusion_threshold: 0.25,
            depth_tolerance: 0.01,
            max_patches: None,
            skip_region: None,
        }
    }
}

impl RetrievalParams {
    fn validate(&self) -> Result<(), MemoryError> {
        if let RetrievalMode::Sparse { stride: 0 } = self.mode {
            return Err(MemoryError::InvalidParameter("stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion_threshold) {
            return Err(MemoryError::InvalidParameter(format!(
                "occlusion threshold {} outside [0, 1]",
                self.occlusion_threshold
            )));
        }
        if !(self.depth_tolerance >= 0.0) {
            return Err(MemoryError::InvalidParameter(format!(
                "depth tolerance {}",
                self.depth_tolerance
            )));
        }
        Ok(())
    }
}

/// A memory patch as seen from a query camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedPatch {
    pub id: PatchId,
    pub source_time: usize,
    pub size: usize,
    /// `(p, p)` warped `(j, u′, v′)`; only entries with `valid` set carry
    /// meaning downstream.
    pub coords: Vec<RopeCoord<f64>>,
    pub valid: Vec<bool>,
    /// Token z-depth in the query camera.
    pub depth: Vec<f64>,
    /// Fraction of tokens surviving frustum, z-buffer and skip masks.
    pub occlusion_score: f64,
}

impl RetrievedPatch {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Retrieves patches for `query` using the voxel index for candidates.
pub fn retrieve(
    memory: &MosaicMemory,
    query: &Camera<f64>,
    query_time: i64,
    params: &RetrievalParams,
) -> Result<Vec<RetrievedPatch>, MemoryError> {
    params.validate()?;
    let candidates = memory.candidate_patches(query);
    Ok(retrieve_among(memory, &candidates, query, query_time, params))
}

/// Same as [`retrieve`] but considers every stored patch.
pub fn retrieve_linear_scan(
    memory: &MosaicMemory,
    query: &Camera<f64>,
    query_time: i64,
    params: &RetrievalParams,
) -> Result<Vec<RetrievedPatch>, MemoryError> {
    params.validate()?;
    Ok(retrieve_among(memory, &memory.ids(), query, query_time, params))
}

fn keep_sparse(patch: &MemoryPatch, mode: RetrievalMode) -> bool {
    match mode {
        RetrievalMode::Dense => true,
        RetrievalMode::Sparse { stride } => {
            let gr = patch.rope_origin.row / patch.size;
            let gc = patch.rope_origin.col / patch.size;
            (gr + gc + patch.source_time) % stride == 0
        }
    }
}

struct Pending<'a> {
    patch: &'a MemoryPatch,
    coords: Vec<RopeCoord<f64>>,
    depth: Vec<f64>,
    /// Query latent cell index per token, `None` when outside the frustum.
    cell: Vec<Option<usize>>,
}

pub(crate) fn retrieve_among(
    memory: &MosaicMemory,
    candidates: &[PatchId],
    query: &Camera<f64>,
    query_time: i64,
    params: &RetrievalParams,
) -> Vec<RetrievedPatch> {
    let Some(f) = memory.downsample() else {
        return Vec::new();
    };
    let (qw, qh) = (query.width() / f, query.height() / f);
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();

    let pending: Vec<Pending> = ids
        .iter()
        .filter_map(|id| memory.get(*id))
        .filter(|p| keep_sparse(p, params.mode))
        .map(|patch| {
            let w = warp_rope_coords(patch, query, query_time);
            let cell = w
                .coords
                .iter()
                .zip(&w.valid)
                .map(|(c, &ok)| {
                    if !ok {
                        return None;
                    }
                    let col = (c.u + 0.5).floor();
                    let row = (c.v + 0.5).floor();
                    if col < 0.0 || row < 0.0 || col as usize >= qw || row as usize >= qh {
                        None
                    } else {
                        Some(row as usize * qw + col as usize)
                    }
                })
                .collect();
            Pending {
                patch,
                coords: w.coords,
                depth: w.depth,
                cell,
            }
        })
        .collect();

    let mut zbuf = vec![f64::INFINITY; qw * qh];
    for p in &pending {
        for (cell, &d) in p.cell.iter().zip(&p.depth) {
            if let Some(c) = cell {
                if d < zbuf[*c] {
                    zbuf[*c] = d;
                }
            }
        }
    }

    let tokens = |p: &Pending| p.patch.token_count() as f64;
    let mut out: Vec<RetrievedPatch> = pending
        .iter()
        .filter_map(|p| {
            let valid: Vec<bool> = p
                .cell
                .iter()
                .zip(&p.depth)
                .zip(&p.coords)
                .map(|((cell, &d), c)| {
                    let Some(cell) = cell else { return false };
                    if d > zbuf[*cell] * (1.0 + params.depth_tolerance) {
                        return false;
                    }
                    match &params.skip_region {
                        Some(mask) => !in_skip_region(mask, c, f),
                        None => true,
                    }
                })
                .collect();
            let n = valid.iter().filter(|&&v| v).count();
            let score = n as f64 / tokens(p);
            if n == 0 || score < params.occlusion_threshold {
                return None;
            }
            Some(RetrievedPatch {
                id: p.patch.id,
                source_time: p.patch.source_time,
                size: p.patch.size,
                coords: p.coords.clone(),
                valid,
                depth: p.depth.clone(),
                occlusion_score: score,
            })
        })
        .collect();

    out.sort_by(|a, b| {
        b.occlusion_score
            .partial_cmp(&a.occlusion_score)
            .expect("finite score")
            .then(a.id.cmp(&b.id))
    });
    if let Some(max) = params.max_patches {
        out.truncate(max);
    }
    out
}

fn in_skip_region(mask: &Mask, c: &RopeCoord<f64>, f: usize) -> bool {
    let u = super::latent_to_pixel(c.u, f);
    let v = super::latent_to_pixel(c.v, f);
    if u < 0.0 || v < 0.0 {
        return false;
    }
    let (col, row) = (u.floor() as usize, v.floor() as usize);
    col < mask.width && row < mask.height && mask.get(row, col)
}

/// Query-image footprint of the first frame's memory: every query latent
/// cell hit by a visible token of a patch with `source_time == first_time`
/// is marked over its full `f × f` pixel block.
pub fn first_frame_footprint(memory: &MosaicMemory, query: &Camera<f64>, first_time: usize) -> Mask {
    let mut mask = Mask::new(query.height(), query.width());
    let Some(f) = memory.downsample() else {
        return mask;
    };
    let ids: Vec<PatchId> = memory
        .patches()
        .filter(|p| p.source_time == first_time)
        .map(|p| p.id)
        .collect();
    let params = RetrievalParams {
        occlusion_threshold: 0.0,
        ..RetrievalParams::default()
    };
    for r in retrieve_among(memory, &ids, query, 0, &params) {
        for (c, ok) in r.coords.iter().zip(&r.valid) {
            if !ok {
                continue;
            }
            let col = (c.u + 0.5).floor() as usize;
            let row = (c.v + 0.5).floor() as usize;
            for y in row * f..((row + 1) * f).min(mask.height) {
                for x in col * f..((col + 1) * f).min(mask.width) {
                    mask.set(y, x, true);
                }
            }
        }
    }
    mask
}
