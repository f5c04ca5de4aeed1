//! Bilinear resampling of latent features at fractional coordinates.

use crate::grid::Grid;

/// Sample location in a source plane: `u` along columns, `v` along rows,
/// in token units with integer values at token centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub u: f64,
    pub v: f64,
}

/// Resampled `(p, p, c)` features. Invalid tokens hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedLatent {
    pub size: usize,
    pub channels: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
    /// Query latent `(col, row)` of token `(0, 0)` when the warp places a
    /// memory patch into a query view.
    pub anchor: (i64, i64),
}

/// Axis weights `[(index, weight)]` for one coordinate; neighbors with
/// zero weight are not referenced.
fn taps(x: f64) -> Option<[(i64, f64); 2]> {
    if !x.is_finite() {
        return None;
    }
    let x0 = x.floor();
    let frac = x - x0;
    Some([(x0 as i64, 1.0 - frac), (x0 as i64 + 1, frac)])
}

/// Bilinear interpolation at one point. `None` when a neighbor that
/// carries weight falls outside the plane.
pub fn sample_bilinear(source: &Grid<f32>, at: GridPoint, out: &mut [f32]) -> bool {
    let (Some(tu), Some(tv)) = (taps(at.u), taps(at.v)) else {
        return false;
    };
    let (h, w) = (source.height as i64, source.width as i64);
    let mut acc = vec![0.0f64; source.channels];
    let mut first = true;
    for &(row, wv) in &tv {
        if wv == 0.0 {
            continue;
        }
        for &(col, wu) in &tu {
            if wu == 0.0 {
                continue;
            }
            if row < 0 || col < 0 || row >= h || col >= w {
                return false;
            }
            let weight = wv * wu;
            let px = source.pixel(row as usize, col as usize);
            for (a, &s) in acc.iter_mut().zip(px) {
                if first {
                    *a = s as f64 * weight;
                } else {
                    *a += s as f64 * weight;
                }
            }
            first = false;
        }
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = *a as f32;
    }
    true
}

/// Samples `source` at every point of a `p × p` grid (row-major).
///
/// Tokens whose weighted neighbors leave `[0, H) × [0, W)` are zero-filled
/// and masked; coordinates are never clamped.
pub fn warp_latent(source: &Grid<f32>, target: &[GridPoint]) -> WarpedLatent {
    let size = (target.len() as f64).sqrt().round() as usize;
    assert_eq!(size * size, target.len(), "target grid must be square");
    let c = source.channels;
    let mut values = vec![0.0f32; target.len() * c];
    let mut valid = vec![false; target.len()];
    for (i, &pt) in target.iter().enumerate() {
        let slot = &mut values[i * c..(i + 1) * c];
        if sample_bilinear(source, pt, slot) {
            valid[i] = true;
        } else {
            slot.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    WarpedLatent {
        size,
        channels: c,
        values,
        valid,
        anchor: (0, 0),
    }
}
