//! Compositing retrieved patches onto the query latent canvas.

use crate::grid::{Grid, Mask};

use super::{PatchId, RetrievedPatch};

/// Query-view mosaic at latent resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Mosaic {
    pub canvas: Grid<f32>,
    pub covered: Mask,
    /// `(patch, token)` that filled each cell.
    pub source: Vec<Option<(PatchId, usize)>>,
}

/// Places each surviving token's latent into the query cell nearest its
/// warped coordinate. When several tokens compete for a cell the best
/// aligned one (smallest distance to the cell center) wins, then the
/// nearer depth, then the lower id.
pub fn compose_mosaic<'a, I>(items: I, channels: usize, height: usize, width: usize) -> Mosaic
where
    I: IntoIterator<Item = (&'a RetrievedPatch, &'a [f32])>,
{
    let mut best: Vec<Option<(f64, f64, PatchId, usize, &'a [f32])>> = vec![None; height * width];
    for (patch, latent) in items {
        for (t, c) in patch.coords.iter().enumerate() {
            if !patch.valid[t] {
                continue;
            }
            let col = (c.u + 0.5).floor();
            let row = (c.v + 0.5).floor();
            if col < 0.0 || row < 0.0 || col as usize >= width || row as usize >= height {
                continue;
            }
            let cell = row as usize * width + col as usize;
            let align = (c.u - col).powi(2) + (c.v - row).powi(2);
            let cand = (align, patch.depth[t], patch.id, t, &latent[t * channels..(t + 1) * channels]);
            let replace = match &best[cell] {
                None => true,
                Some((a, d, id, tok, _)) => (cand.0, cand.1, cand.2, cand.3) < (*a, *d, *id, *tok),
            };
            if replace {
                best[cell] = Some(cand);
            }
        }
    }
    let mut canvas = Grid::filled(height, width, channels, 0.0f32);
    let mut covered = Mask::new(height, width);
    let mut source = vec![None; height * width];
    for (cell, b) in best.iter().enumerate() {
        if let Some((_, _, id, tok, values)) = b {
            let (row, col) = (cell / width, cell % width);
            canvas.pixel_mut(row, col).copy_from_slice(values);
            covered.set(row, col, true);
            source[cell] = Some((*id, *tok));
        }
    }
    Mosaic {
        canvas,
        covered,
        source,
    }
}
