use crate::geometry::{project_camera_point, Camera};
use crate::grid::Grid;

use super::SyntheticScene;

/// Splatted view of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    /// `(H, W, 3)` RGB in `[0, 1]`; background is black.
    pub image: Grid<f32>,
    /// `(H, W, 1)` z-depth, `∞` where no point covers the pixel.
    pub depth: Grid<f64>,
    /// Index of the winning scene point per pixel.
    pub point_ids: Vec<Option<u32>>,
    pub camera: Camera<f64>,
}

impl RenderedFrame {
    pub fn covered(&self, row: usize, col: usize) -> bool {
        self.point_ids[row * self.image.width + col].is_some()
    }
}

pub fn render(scene: &SyntheticScene, camera: &Camera<f64>) -> RenderedFrame {
    render_at(scene, camera, 0.0)
}

/// Renders with points at `position + velocity · time`. Each point is an
/// elliptical disc of its projected radius at constant depth; a pixel is
/// covered when its center falls inside the disc, and the nearest depth
/// wins (ties keep the lower point index).
pub fn render_at(scene: &SyntheticScene, camera: &Camera<f64>, time: f64) -> RenderedFrame {
    let k = &camera.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut image = Grid::filled(h, w, 3, 0.0f32);
    let mut depth = Grid::filled(h, w, 1, f64::INFINITY);
    let mut ids: Vec<Option<u32>> = vec![None; w * h];
    for (idx, p) in scene.points.iter().enumerate() {
        let pc = camera.pose.world_to_camera(p.position_at(time));
        if !(pc.z > 0.0) {
            continue;
        }
        let (c, z) = project_camera_point(k, pc);
        let ru = k.fx * p.radius / z;
        let rv = k.fy * p.radius / z;
        let c0 = (c.u - ru - 0.5).floor().max(0.0);
        let c1 = (c.u + ru - 0.5).ceil().min(w as f64 - 1.0);
        let r0 = (c.v - rv - 0.5).floor().max(0.0);
        let r1 = (c.v + rv - 0.5).ceil().min(h as f64 - 1.0);
        if !(c0 <= c1 && r0 <= r1) {
            continue;
        }
        for row in r0 as usize..=r1 as usize {
            let dy = (row as f64 + 0.5 - c.v) / rv;
            for col in c0 as usize..=c1 as usize {
                let dx = (col as f64 + 0.5 - c.u) / ru;
                if dx * dx + dy * dy > 1.0 {
                    continue;
                }
                let cell = row * w + col;
                if z < depth.data[cell] {
                    depth.data[cell] = z;
                    ids[cell] = Some(idx as u32);
                    let px = image.pixel_mut(row, col);
                    for ch in 0..3 {
                        px[ch] = p.color[ch] as f32;
                    }
                }
            }
        }
    }
    RenderedFrame {
        image,
        depth,
        point_ids: ids,
        camera: *camera,
    }
}

/// `f × f` average pooling of an image.
pub fn pool_image(image: &Grid<f32>, f: usize) -> Grid<f32> {
    let (h, w, c) = (image.height / f, image.width / f, image.channels);
    let mut out = Grid::filled(h, w, c, 0.0f32);
    let n = (f * f) as f64;
    let mut acc = vec![0.0f64; c];
    for row in 0..h {
        for col in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for y in row * f..(row + 1) * f {
                for x in col * f..(col + 1) * f {
                    for (a, v) in acc.iter_mut().zip(image.pixel(y, x)) {
                        *a += *v as f64;
                    }
                }
            }
            for (o, a) in out.pixel_mut(row, col).iter_mut().zip(&acc) {
                *o = (a / n) as f32;
            }
        }
    }
    out
}

/// Block depth for lifting: the mean when every pixel is covered and the
/// block's depth spread `max / min` is at most `1 + tolerance`, else `∞`.
pub fn pool_depth(depth: &Grid<f64>, f: usize, tolerance: f64) -> Grid<f64> {
    let (h, w) = (depth.height / f, depth.width / f);
    let mut out = Grid::filled(h, w, 1, f64::INFINITY);
    for row in 0..h {
        for col in 0..w {
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, 0.0f64, 0.0);
            for y in row * f..(row + 1) * f {
                for x in col * f..(col + 1) * f {
                    let d = *depth.at(y, x, 0);
                    lo = lo.min(d);
                    hi = hi.max(d);
                    sum += d;
                }
            }
            if hi.is_finite() && lo > 0.0 && hi <= lo * (1.0 + tolerance) {
                out.data[row * w + col] = sum / (f * f) as f64;
            }
        }
    }
    out
}
