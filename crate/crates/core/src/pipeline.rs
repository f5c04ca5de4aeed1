//! End-to-end glue: lifting datasets into memory, assembling the
//! conditioning for a query view, and the revisit rollout.

use thiserror::Error;

use crate::geometry::Camera;
use crate::grid::{Grid, Mask};
use crate::memory::{
    compose_mosaic, lift_frame_partial, retrieve, FrameToLift, MemoryError, MemoryPatch, Mosaic,
    MosaicMemory, RetrievalParams, RetrievedPatch,
};
use crate::metrics::{psnr, ssim, MetricsError};
use crate::simulator::Dataset;
use crate::warping::{warp_patch_latent, warp_rope_coords, WarpPolicy, WarpStrategy, WarpedLatent};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("frame {0} out of range")]
    Frame(usize),
}

/// Lifts frame `t` of a dataset; patches without usable depth are skipped.
pub fn lift_dataset_frame(
    ds: &Dataset,
    t: usize,
    patch_size: usize,
    first_id: u64,
) -> Result<Vec<MemoryPatch>, PipelineError> {
    let f = ds.frames.get(t).ok_or(PipelineError::Frame(t))?;
    Ok(lift_frame_partial(
        &FrameToLift {
            latent: &f.latent,
            depth: &f.latent_depth,
            camera: &ds.cameras[t],
            time: t,
            patch_size,
            downsample: ds.downsample,
        },
        first_id,
    )?)
}

/// Lifts the given frames, in order, into one store.
pub fn lift_dataset(
    ds: &Dataset,
    frames: impl IntoIterator<Item = usize>,
    patch_size: usize,
) -> Result<MosaicMemory, PipelineError> {
    let mut memory = MosaicMemory::new();
    for t in frames {
        let patches = lift_dataset_frame(ds, t, patch_size, memory.next_id())?;
        memory.insert(patches)?;
    }
    Ok(memory)
}

/// One retrieved patch prepared for conditioning.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionPatch {
    pub retrieved: RetrievedPatch,
    pub strategy: WarpStrategy,
    /// The patch's own `(p, p, c)` latent.
    pub latent: Vec<f32>,
    /// Resampled latent, present for the latent and both strategies.
    pub warped: Option<WarpedLatent>,
}

/// Memory conditioning for one query view.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub query: Camera<f64>,
    /// Latent frame index used as the temporal RoPE coordinate.
    pub query_time: i64,
    pub downsample: usize,
    pub channels: usize,
    pub patches: Vec<ConditionPatch>,
}

impl Conditioning {
    pub fn latent_size(&self) -> (usize, usize) {
        (self.query.height() / self.downsample, self.query.width() / self.downsample)
    }

    /// Retrieved tokens placed on the query latent canvas.
    pub fn mosaic(&self) -> Mosaic {
        let (h, w) = self.latent_size();
        compose_mosaic(
            self.patches.iter().map(|p| (&p.retrieved, p.latent.as_slice())),
            self.channels,
            h,
            w,
        )
    }
}

pub fn condition(
    memory: &MosaicMemory,
    query: &Camera<f64>,
    query_time: i64,
    params: &RetrievalParams,
    policy: &WarpPolicy,
) -> Result<Conditioning, MemoryError> {
    let retrieved = retrieve(memory, query, query_time, params)?;
    let channels = memory.patches().next().map_or(0, |p| p.channels);
    let patches = retrieved
        .into_iter()
        .map(|r| {
            let patch = memory.get(r.id).expect("retrieved id is stored");
            let strategy = policy.choose(r.id);
            let warped = match strategy {
                WarpStrategy::Rope => None,
                WarpStrategy::Latent | WarpStrategy::Both => {
                    let w = warp_rope_coords(patch, query, query_time);
                    Some(warp_patch_latent(patch, &w, &r.valid))
                }
            };
            ConditionPatch {
                strategy,
                latent: patch.latent.clone(),
                warped,
                retrieved: r,
            }
        })
        .collect();
    Ok(Conditioning {
        query: *query,
        query_time,
        downsample: memory.downsample().unwrap_or(1),
        channels,
        patches,
    })
}

/// Masked comparison of a mosaic against a reference latent.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicScore {
    /// Covered cells whose reference has a usable depth.
    pub mask: Mask,
    pub psnr: Option<f64>,
    /// `None` when no SSIM window is centered on the mask or the latent is
    /// smaller than one window.
    pub ssim: Option<f64>,
}

pub fn score_mosaic(
    mosaic: &Mosaic,
    target: &Grid<f32>,
    target_depth: &Grid<f64>,
) -> Result<MosaicScore, MetricsError> {
    let mut mask = mosaic.covered.clone();
    for (m, d) in mask.data.iter_mut().zip(&target_depth.data) {
        *m = *m && d.is_finite();
    }
    if mask.count() == 0 {
        return Ok(MosaicScore {
            mask,
            psnr: None,
            ssim: None,
        });
    }
    // cells outside the mask take the reference value so SSIM windows that
    // straddle the mask edge only see mosaic content where it is scored
    let b = widen(target);
    let mut a = widen(&mosaic.canvas);
    let c = a.channels;
    for (i, _) in mask.data.iter().enumerate().filter(|(_, m)| !**m) {
        a.data[i * c..(i + 1) * c].copy_from_slice(&b.data[i * c..(i + 1) * c]);
    }
    let p = psnr(&a, &b, &mask)?;
    let s = match ssim(&a, &b, &mask) {
        Ok(s) => Some(s),
        Err(MetricsError::EmptyMask | MetricsError::TooSmall { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(MosaicScore {
        mask,
        psnr: Some(p),
        ssim: s,
    })
}

fn widen(g: &Grid<f32>) -> Grid<f64> {
    Grid::from_vec(g.height, g.width, g.channels, g.data.iter().map(|v| *v as f64).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub time: usize,
    pub retrieved: usize,
    pub mosaic: Mosaic,
    pub score: MosaicScore,
}

/// Walks the trajectory: at each frame `t > 0` retrieves from the memory of
/// frames `< t`, composites at the true pose of `t` and scores against the
/// pooled render of `t`, then inserts frame `t`.
pub fn revisit_rollout(
    ds: &Dataset,
    patch_size: usize,
    params: &RetrievalParams,
) -> Result<Vec<RolloutStep>, PipelineError> {
    let mut memory = MosaicMemory::new();
    let mut steps = Vec::new();
    for t in 0..ds.len() {
        if t > 0 {
            let c = condition(&memory, &ds.cameras[t], t as i64, params, &WarpPolicy::Fixed(WarpStrategy::Rope))?;
            let mosaic = c.mosaic();
            let f = &ds.frames[t];
            let score = score_mosaic(&mosaic, &f.latent, &f.latent_depth)?;
            steps.push(RolloutStep {
                time: t,
                retrieved: c.patches.len(),
                mosaic,
                score,
            });
        }
        let patches = lift_dataset_frame(ds, t, patch_size, memory.next_id())?;
        memory.insert(patches)?;
    }
    Ok(steps)
}
