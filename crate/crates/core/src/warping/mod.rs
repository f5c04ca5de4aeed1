//! Aligning memory patches with a query view: reprojected RoPE
//! coordinates that keep their fractional part, and bilinear resampling of
//! patch features.

mod latent;
mod rope;

use serde::{Deserialize, Serialize};

use crate::geometry::{reproject, Camera};
use crate::grid::Grid;
use crate::memory::{pixel_to_latent, MemoryPatch, PatchId};
use crate::scalar::Real;

pub use latent::{sample_bilinear, warp_latent, GridPoint, WarpedLatent};
pub use rope::{apply_rope, axis_frequency, rope_phases, RopeError, RopePhaseTable};
pub(crate) use rope::rotate_pairs;

/// 3D RoPE position `(j, u′, v′)`: target latent frame and fractional
/// latent-grid column/row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RopeCoord<T> {
    pub j: i64,
    pub u: T,
    pub v: T,
}

impl<T: Real> RopeCoord<T> {
    pub fn position(&self) -> [T; 3] {
        [T::lit(self.j as f64), self.u, self.v]
    }
}

/// Per-token reprojection of a patch into a query view.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedCoords {
    pub size: usize,
    pub coords: Vec<RopeCoord<f64>>,
    /// z-depth of each token in the query camera.
    pub depth: Vec<f64>,
    /// In front of the query camera and inside its image.
    pub valid: Vec<bool>,
}

/// Reprojects every token center of `patch` into `query` and converts to
/// query latent-grid units. Fractional parts are preserved.
pub fn warp_rope_coords(patch: &MemoryPatch, query: &Camera<f64>, query_time: i64) -> WarpedCoords {
    let p = patch.size;
    let f = patch.downsample;
    let mut coords = Vec::with_capacity(p * p);
    let mut depth = Vec::with_capacity(p * p);
    let mut valid = Vec::with_capacity(p * p);
    for r in 0..p {
        for s in 0..p {
            let t = r * p + s;
            let rp = reproject(patch.token_pixel(r, s), patch.depth[t], &patch.source_camera, query);
            coords.push(RopeCoord {
                j: query_time,
                u: pixel_to_latent(rp.coord.u, f),
                v: pixel_to_latent(rp.coord.v, f),
            });
            depth.push(rp.depth);
            valid.push(rp.coord.valid && patch.has_depth(t));
        }
    }
    WarpedCoords {
        size: p,
        coords,
        depth,
        valid,
    }
}

/// Resamples a patch's own latent into query-aligned positions.
///
/// The patch is anchored at the rounded mean displacement; for each target
/// token the source location is the first-order inverse of the forward
/// warp, `x = (r, s) + anchor + (r, s) − w(r, s)`, which is exact for pure
/// translations. Tokens masked in `valid` stay masked.
pub fn warp_patch_latent(patch: &MemoryPatch, warped: &WarpedCoords, valid: &[bool]) -> WarpedLatent {
    let p = patch.size;
    let source = Grid::from_vec(p, p, patch.channels, patch.latent.clone());
    let mut du = 0.0;
    let mut dv = 0.0;
    let mut n = 0usize;
    for r in 0..p {
        for s in 0..p {
            let t = r * p + s;
            if valid[t] {
                du += warped.coords[t].u - s as f64;
                dv += warped.coords[t].v - r as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return WarpedLatent {
            size: p,
            channels: patch.channels,
            values: vec![0.0; p * p * patch.channels],
            valid: vec![false; p * p],
            anchor: (0, 0),
        };
    }
    let anchor_u = (du / n as f64).round();
    let anchor_v = (dv / n as f64).round();
    let target: Vec<GridPoint> = (0..p * p)
        .map(|t| {
            let (r, s) = ((t / p) as f64, (t % p) as f64);
            let w = warped.coords[t];
            GridPoint {
                u: s + (anchor_u + s - w.u),
                v: r + (anchor_v + r - w.v),
            }
        })
        .collect();
    let mut out = warp_latent(&source, &target);
    for (t, ok) in valid.iter().enumerate() {
        if !ok {
            out.valid[t] = false;
            out.values[t * patch.channels..(t + 1) * patch.channels]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    out.anchor = (anchor_u as i64, anchor_v as i64);
    out
}

/// Which alignment a conditioning patch carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpStrategy {
    Rope,
    Latent,
    Both,
}

/// Per-patch choice between warped RoPE and warped latent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WarpPolicy {
    Fixed(WarpStrategy),
    /// Each patch independently uses warped RoPE with probability `ratio`
    /// and warped latent otherwise; the draw is a hash of `(id, seed)`.
    Mixture { ratio: f64, seed: u64 },
}

impl Default for WarpPolicy {
    fn default() -> Self {
        WarpPolicy::Mixture {
            ratio: 0.5,
            seed: 0,
        }
    }
}

impl WarpPolicy {
    pub fn choose(&self, id: PatchId) -> WarpStrategy {
        match *self {
            WarpPolicy::Fixed(s) => s,
            WarpPolicy::Mixture { ratio, seed } => {
                if unit_hash(id.0, seed) < ratio {
                    WarpStrategy::Rope
                } else {
                    WarpStrategy::Latent
                }
            }
        }
    }
}

/// splitmix64 of `id ^ seed` mapped to `[0, 1)`.
fn unit_hash(id: u64, seed: u64) -> f64 {
    let mut z = id ^ seed.rotate_left(17) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}
